//! Joint data association and pose estimation.
//!
//! Class-consistent minimal matching sets are enumerated, each is turned into pose
//! candidates by the minimal solver suited to its size, and every candidate is scored by
//! object-wise IoU between detected ellipses and projected ellipsoids.

use nalgebra::Matrix3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::conic::{ellipse_iou, inscribed_ellipse, BBox, Ellipse};
use crate::error::{Error, Result};
use crate::quadric::{project_ellipsoid, CameraIntrinsics, Pose};
use crate::reconstruction::SceneModel;
use crate::solvers::{
    p2e_refine_yaw, p2e_zero_roll, p3p_centers_corrected, position_from_orientation, Correspondence,
    PoseCandidate, Solver,
};

/// A candidate ellipse for a detection, optionally valid only when the detection is
/// paired with one specific scene object.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEllipse {
    pub ellipse: Ellipse,
    pub object: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    bbox: BBox,
    class: String,
    score: f64,
    ellipses: Vec<DetectionEllipse>,
}

impl Detection {
    pub fn new(bbox: BBox, class: impl Into<String>, score: f64, ellipses: Vec<DetectionEllipse>) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidConfig(format!("detection score {score} outside [0, 1]")));
        }
        if ellipses.is_empty() {
            return Err(Error::InvalidConfig("detection without ellipse".into()));
        }
        Ok(Self {
            bbox,
            class: class.into(),
            score,
            ellipses,
        })
    }

    /// Detection whose only ellipse is inscribed in its box.
    pub fn inscribed(bbox: BBox, class: impl Into<String>, score: f64) -> Result<Self> {
        let ellipse = inscribed_ellipse(&bbox);
        Self::new(bbox, class, score, vec![DetectionEllipse { ellipse, object: None }])
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn class(&self) -> &str {
        &self.class
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn ellipses(&self) -> &[DetectionEllipse] {
        &self.ellipses
    }

    /// Ellipse to use when this detection is paired with `object`: the one bound to it,
    /// else the first unbound one.
    pub fn ellipse_for(&self, object: &str) -> Option<&Ellipse> {
        self.ellipses
            .iter()
            .find(|e| e.object.as_deref() == Some(object))
            .or_else(|| self.ellipses.iter().find(|e| e.object.is_none()))
            .map(|e| &e.ellipse)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub max_iterations: usize,
    pub iou_threshold: f64,
    pub seed: u64,
    /// Angular resolution of the two-object solver, radians.
    pub sweep_step: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            iou_threshold: 0.5,
            seed: 0,
            sweep_step: 0.1f64.to_radians(),
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::InvalidConfig("iou_threshold must lie in (0, 1)".into()));
        }
        if !(self.sweep_step > 0.0 && self.sweep_step.is_finite()) {
            return Err(Error::InvalidConfig("sweep_step must be positive".into()));
        }
        Ok(())
    }
}

/// Detection index paired with a scene object index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pairing {
    pub detection: usize,
    pub object: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub pairs: Vec<Pairing>,
    /// Product of the detection scores.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    pub detection: usize,
    pub object_id: String,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub pose: Pose,
    pub solver: Solver,
    /// Pairs used by the minimal solver.
    pub minimal_set: Vec<Association>,
    /// All inliers, minimal set included, by detection index.
    pub inliers: Vec<Association>,
    pub mean_iou: f64,
    pub hypotheses_evaluated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseScore {
    pub ious: Vec<f64>,
    pub mean: f64,
}

/// Object-wise IoU of each correspondence under `pose`; objects not in front score 0.
pub fn score_pose(pose: &Pose, pairs: &[Correspondence], k: &CameraIntrinsics) -> PoseScore {
    let ious: Vec<f64> = pairs
        .iter()
        .map(|c| match project_ellipsoid(&c.ellipsoid, pose, k) {
            Ok(p) => ellipse_iou(&c.ellipse, &p),
            Err(_) => 0.0,
        })
        .collect();
    let mean = if ious.is_empty() {
        0.0
    } else {
        ious.iter().sum::<f64>() / ious.len() as f64
    };
    PoseScore { ious, mean }
}

/// Objects each detection may be paired with.
fn admissible(dets: &[Detection], scene: &SceneModel) -> Vec<Vec<usize>> {
    dets.iter()
        .map(|d| {
            scene
                .objects()
                .iter()
                .enumerate()
                .filter(|(_, o)| o.class == d.class && d.ellipse_for(&o.id).is_some())
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

/// Size of the minimal sets: three when the classes allow it, else as many as possible.
pub fn minimal_set_size(dets: &[Detection], scene: &SceneModel) -> usize {
    use std::collections::BTreeMap;
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for d in dets {
        counts.entry(d.class.as_str()).or_default().0 += 1;
    }
    for o in scene.objects() {
        if let Some(c) = counts.get_mut(o.class.as_str()) {
            c.1 += 1;
        }
    }
    counts.values().map(|(d, o)| d.min(o)).sum::<usize>().min(3)
}

fn extend(
    adm: &[Vec<usize>],
    size: usize,
    start: usize,
    current: &mut Vec<Pairing>,
    out: &mut Vec<Vec<Pairing>>,
) {
    if current.len() == size {
        out.push(current.clone());
        return;
    }
    for d in start..adm.len() {
        for &o in &adm[d] {
            if current.iter().any(|p| p.object == o) {
                continue;
            }
            current.push(Pairing { detection: d, object: o });
            extend(adm, size, d + 1, current, out);
            current.pop();
        }
    }
}

/// All class-consistent injective minimal matching sets, best detection scores first.
pub fn enumerate_hypotheses(dets: &[Detection], scene: &SceneModel) -> Vec<Hypothesis> {
    let size = minimal_set_size(dets, scene);
    if size == 0 {
        return Vec::new();
    }
    let adm = admissible(dets, scene);
    let mut sets = Vec::new();
    extend(&adm, size, 0, &mut Vec::with_capacity(size), &mut sets);
    let mut hyps: Vec<Hypothesis> = sets
        .into_iter()
        .map(|pairs| {
            let score = pairs.iter().map(|p| dets[p.detection].score).product();
            Hypothesis { pairs, score }
        })
        .collect();
    hyps.sort_by(|a, b| b.score.total_cmp(&a.score));
    hyps
}

/// Evaluation budget: everything when it fits, else the best-scored half plus a seeded
/// sample of the rest.
fn select(hyps: Vec<Hypothesis>, budget: usize, seed: u64) -> Vec<Hypothesis> {
    if hyps.len() <= budget {
        return hyps;
    }
    let head = budget.div_ceil(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tail_len = hyps.len() - head;
    let mut picked: Vec<usize> = sample(&mut rng, tail_len, budget - head)
        .into_iter()
        .map(|i| i + head)
        .collect();
    picked.sort_unstable();
    let mut out: Vec<Hypothesis> = hyps[..head].to_vec();
    out.extend(picked.into_iter().map(|i| hyps[i].clone()));
    out
}

struct Scored {
    inliers: Vec<(usize, usize, f64)>,
    mean: f64,
    solver: Solver,
    hypothesis: usize,
    candidate: usize,
    pose: Pose,
}

/// `true` when `a` ranks strictly above `b`.
fn better(a: &Scored, b: &Scored) -> bool {
    use std::cmp::Ordering::*;
    let ord = a
        .inliers
        .len()
        .cmp(&b.inliers.len())
        .then(a.mean.total_cmp(&b.mean))
        .then(b.solver.cmp(&a.solver))
        .then(b.hypothesis.cmp(&a.hypothesis))
        .then(b.candidate.cmp(&a.candidate));
    ord == Greater
}

fn pick(a: Option<Scored>, b: Option<Scored>) -> Option<Scored> {
    match (a, b) {
        (Some(a), Some(b)) => Some(if better(&b, &a) { b } else { a }),
        (a, None) => a,
        (None, b) => b,
    }
}

/// Greedy injective matching of detections to projected objects by decreasing IoU.
fn match_inliers(
    pose: &Pose,
    dets: &[Detection],
    scene: &SceneModel,
    adm: &[Vec<usize>],
    k: &CameraIntrinsics,
    threshold: f64,
) -> Vec<(usize, usize, f64)> {
    let objects = scene.objects();
    let projected: Vec<Option<Ellipse>> = objects
        .iter()
        .map(|o| project_ellipsoid(&o.ellipsoid, pose, k).ok())
        .collect();
    let mut pairs = Vec::new();
    for (d, cands) in adm.iter().enumerate() {
        for &o in cands {
            let (Some(p), Some(e)) = (&projected[o], dets[d].ellipse_for(&objects[o].id)) else {
                continue;
            };
            let iou = ellipse_iou(e, p);
            if iou >= threshold {
                pairs.push((d, o, iou));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let mut used_d = vec![false; dets.len()];
    let mut used_o = vec![false; objects.len()];
    let mut out = Vec::new();
    for (d, o, iou) in pairs {
        if !used_d[d] && !used_o[o] {
            used_d[d] = true;
            used_o[o] = true;
            out.push((d, o, iou));
        }
    }
    out.sort_by_key(|p| p.0);
    out
}

fn correspondences(hyp: &Hypothesis, dets: &[Detection], scene: &SceneModel) -> Vec<Correspondence> {
    let objects = scene.objects();
    hyp.pairs
        .iter()
        .map(|p| {
            let o = &objects[p.object];
            Correspondence {
                ellipse: *dets[p.detection].ellipse_for(&o.id).expect("admissible pairing"),
                ellipsoid: o.ellipsoid,
            }
        })
        .collect()
}

fn solve(
    hyp: &Hypothesis,
    dets: &[Detection],
    scene: &SceneModel,
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
    orientation: Option<&Matrix3<f64>>,
) -> Vec<PoseCandidate> {
    let corr = correspondences(hyp, dets, scene);
    let res = match corr.len() {
        3 => p3p_centers_corrected(&[corr[0], corr[1], corr[2]], k),
        2 => p2e_zero_roll(&[corr[0], corr[1]], k, cfg.sweep_step),
        1 => match orientation {
            Some(r) => position_from_orientation(&corr[0], r, k).map(|s| {
                vec![PoseCandidate {
                    pose: s.pose,
                    solver: Solver::PositionOnly,
                    index: 0,
                }]
            }),
            None => Ok(Vec::new()),
        },
        _ => Ok(Vec::new()),
    };
    res.unwrap_or_else(|e| {
        log::debug!("hypothesis {:?} rejected: {e}", hyp.pairs);
        Vec::new()
    })
}

/// Best pose over all (or a budgeted sample of) minimal hypotheses, ranked by inlier
/// count then mean inlier IoU. Deterministic for a given seed, whatever the thread count.
pub fn localize(
    dets: &[Detection],
    scene: &SceneModel,
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
    orientation: Option<&Matrix3<f64>>,
) -> Result<LocalizationResult> {
    cfg.validate()?;
    let size = minimal_set_size(dets, scene);
    if size == 0 || (size < 2 && orientation.is_none()) {
        return Err(Error::NotEnoughObjects { available: size });
    }
    let adm = admissible(dets, scene);
    let hyps = select(enumerate_hypotheses(dets, scene), cfg.max_iterations, cfg.seed);
    let evaluated = hyps.len();

    let mut best = hyps
        .par_iter()
        .enumerate()
        .map(|(h, hyp)| {
            solve(hyp, dets, scene, k, cfg, orientation)
                .into_iter()
                .enumerate()
                .map(|(c, cand)| {
                    let inliers = match_inliers(&cand.pose, dets, scene, &adm, k, cfg.iou_threshold);
                    let mean = if inliers.is_empty() {
                        0.0
                    } else {
                        inliers.iter().map(|p| p.2).sum::<f64>() / inliers.len() as f64
                    };
                    Scored {
                        inliers,
                        mean,
                        solver: cand.solver,
                        hypothesis: h,
                        candidate: c,
                        pose: cand.pose,
                    }
                })
                .filter(|s| s.inliers.len() >= size)
                .fold(None, |acc, s| pick(acc, Some(s)))
        })
        .reduce(|| None, pick)
        .ok_or(Error::NoValidPose)?;

    let hyp = &hyps[best.hypothesis];
    if best.solver == Solver::P2e {
        // Sweep samples bound the yaw resolution; refine the winner between them.
        let corr = correspondences(hyp, dets, scene);
        if let Some(pose) = p2e_refine_yaw(&[corr[0], corr[1]], k, &best.pose, cfg.sweep_step) {
            let inliers = match_inliers(&pose, dets, scene, &adm, k, cfg.iou_threshold);
            let mean = inliers.iter().map(|p| p.2).sum::<f64>() / inliers.len().max(1) as f64;
            if (inliers.len(), mean) >= (best.inliers.len(), best.mean) {
                best.pose = pose;
                best.inliers = inliers;
                best.mean = mean;
            }
        }
    }

    let objects = scene.objects();
    let iou_of = |d: usize, o: usize| {
        best.inliers
            .iter()
            .find(|p| p.0 == d && p.1 == o)
            .map(|p| p.2)
            .unwrap_or_else(|| {
                let e = dets[d].ellipse_for(&objects[o].id).expect("admissible pairing");
                project_ellipsoid(&objects[o].ellipsoid, &best.pose, k)
                    .map(|p| ellipse_iou(e, &p))
                    .unwrap_or(0.0)
            })
    };
    let minimal_set = hyp
        .pairs
        .iter()
        .map(|p| Association {
            detection: p.detection,
            object_id: objects[p.object].id.clone(),
            iou: iou_of(p.detection, p.object),
        })
        .collect();
    let inliers = best
        .inliers
        .iter()
        .map(|&(d, o, iou)| Association {
            detection: d,
            object_id: objects[o].id.clone(),
            iou,
        })
        .collect();
    Ok(LocalizationResult {
        pose: best.pose,
        solver: best.solver,
        minimal_set,
        inliers,
        mean_iou: best.mean,
        hypotheses_evaluated: evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadric::Ellipsoid;
    use crate::reconstruction::SceneObject;
    use nalgebra::Vector3;

    fn object(id: &str, class: &str, c: [f64; 3]) -> SceneObject {
        SceneObject {
            id: id.into(),
            class: class.into(),
            ellipsoid: Ellipsoid::new(
                Vector3::from(c),
                Vector3::new(0.3, 0.2, 0.1),
                crate::quadric::rotation_from_vector(Vector3::new(0.2, 0.3, -0.1)),
            )
            .unwrap(),
        }
    }

    fn det(class: &str) -> Detection {
        Detection::inscribed(BBox::from_corners(0.0, 0.0, 10.0, 10.0).unwrap(), class, 1.0).unwrap()
    }

    #[test]
    fn forced_bijection_gives_one_hypothesis() {
        let scene = SceneModel::new(vec![
            object("a", "cup", [0.0, 0.0, 0.0]),
            object("b", "book", [1.0, 0.0, 0.0]),
            object("c", "lamp", [0.0, 1.0, 0.0]),
        ])
        .unwrap();
        let dets = [det("lamp"), det("cup"), det("book")];
        assert_eq!(enumerate_hypotheses(&dets, &scene).len(), 1);
    }

    #[test]
    fn one_chair_three_instances() {
        let scene = SceneModel::new(vec![
            object("c1", "chair", [0.0, 0.0, 0.0]),
            object("c2", "chair", [1.0, 0.0, 0.0]),
            object("c3", "chair", [2.0, 0.0, 0.0]),
            object("t", "table", [0.0, 2.0, 0.0]),
            object("l", "lamp", [0.0, 3.0, 0.0]),
        ])
        .unwrap();
        let dets = [det("chair"), det("table"), det("lamp")];
        assert_eq!(enumerate_hypotheses(&dets, &scene).len(), 3);
    }

    #[test]
    fn no_overlap_is_empty() {
        let scene = SceneModel::new(vec![object("a", "cup", [0.0, 0.0, 0.0])]).unwrap();
        assert!(enumerate_hypotheses(&[det("sofa")], &scene).is_empty());
        let err = localize(&[det("sofa")], &scene, &CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap(), &RansacConfig::default(), None);
        assert!(matches!(err, Err(Error::NotEnoughObjects { available: 0 })));
    }

    #[test]
    fn budget_sampling_is_seeded() {
        let hyps: Vec<Hypothesis> = (0..50)
            .map(|i| Hypothesis {
                pairs: vec![Pairing { detection: i, object: 0 }],
                score: 1.0 - i as f64 / 100.0,
            })
            .collect();
        let a = select(hyps.clone(), 10, 7);
        let b = select(hyps.clone(), 10, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert_eq!(&a[..5], &hyps[..5]);
    }

    #[test]
    fn config_validation() {
        assert!(RansacConfig::default().validate().is_ok());
        let bad = RansacConfig { iou_threshold: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = RansacConfig { max_iterations: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
