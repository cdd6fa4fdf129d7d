//! Pose frames, motion sequences, datasets and the canonical JSON file format.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::body::Skeleton;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// 23 body joints plus the global rotation (row 0).
pub const NUM_JOINTS: usize = 24;
/// Width of the 6D rotation representation.
pub const ROT_DIM: usize = 6;
/// Flattened frame width: 24 × 6 rotations followed by the root displacement.
pub const FRAME_DIM: usize = NUM_JOINTS * ROT_DIM + 3;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct PoseFrame<T> {
    pub joint_rot6d: [[T; ROT_DIM]; NUM_JOINTS],
    /// Root translation in meters, world frame.
    pub root_disp: [T; 3],
}

impl<T: Scalar> PoseFrame<T> {
    pub fn zeros() -> Self {
        Self {
            joint_rot6d: [[T::zero(); ROT_DIM]; NUM_JOINTS],
            root_disp: [T::zero(); 3],
        }
    }

    /// Every joint at the identity rotation, root at the origin.
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            joint_rot6d: [[o, z, z, z, o, z]; NUM_JOINTS],
            root_disp: [z; 3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.joint_rot6d.iter().flatten().all(|v| v.is_finite())
            && self.root_disp.iter().all(|v| v.is_finite())
    }
}

/// Row-major flatten of the rotations followed by the root displacement.
pub fn frame_to_vector<T: Scalar>(frame: &PoseFrame<T>) -> Vec<T> {
    let mut v = Vec::with_capacity(FRAME_DIM);
    v.extend(frame.joint_rot6d.iter().flatten());
    v.extend_from_slice(&frame.root_disp);
    v
}

/// Inverse of [`frame_to_vector`].
pub fn vector_to_frame<T: Scalar>(v: &[T]) -> Result<PoseFrame<T>> {
    if v.len() != FRAME_DIM {
        return Err(Error::Dimension {
            context: "vector_to_frame",
            expected: FRAME_DIM.to_string(),
            actual: v.len().to_string(),
        });
    }
    let mut f = PoseFrame::zeros();
    for (j, row) in f.joint_rot6d.iter_mut().enumerate() {
        row.copy_from_slice(&v[j * ROT_DIM..(j + 1) * ROT_DIM]);
    }
    f.root_disp.copy_from_slice(&v[NUM_JOINTS * ROT_DIM..]);
    Ok(f)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence<T> {
    pub frames: Vec<PoseFrame<T>>,
    pub label: usize,
    pub fps: u32,
}

impl<T: Scalar> MotionSequence<T> {
    pub const DEFAULT_FPS: u32 = 20;

    pub fn new(frames: Vec<PoseFrame<T>>, label: usize) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::validation("a motion sequence needs at least one frame"));
        }
        Ok(Self {
            frames,
            label,
            fps: Self::DEFAULT_FPS,
        })
    }

    pub fn from_vectors(rows: &[Vec<T>], label: usize) -> Result<Self> {
        let frames = rows
            .iter()
            .map(|r| vector_to_frame(r))
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames, label)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn to_vectors(&self) -> Vec<Vec<T>> {
        self.frames.iter().map(frame_to_vector).collect()
    }

    /// Translate the root trajectory so frame 0 sits at the origin.
    pub fn recenter(&mut self) {
        let Some(first) = self.frames.first().map(|f| f.root_disp) else {
            return;
        };
        for f in &mut self.frames {
            for k in 0..3 {
                f.root_disp[k] -= first[k];
            }
        }
    }

    /// Keep at most the first `len` frames.
    pub fn truncated(&self, len: usize) -> Self {
        Self {
            frames: self.frames[..len.min(self.frames.len())].to_vec(),
            label: self.label,
            fps: self.fps,
        }
    }

    pub fn cast<U: Scalar>(&self) -> MotionSequence<U> {
        let c = |v: &T| U::from_f64_lossy(v.to_f64_lossless());
        MotionSequence {
            frames: self
                .frames
                .iter()
                .map(|f| PoseFrame {
                    joint_rot6d: f.joint_rot6d.map(|r| r.map(|v| c(&v))),
                    root_disp: f.root_disp.map(|v| c(&v)),
                })
                .collect(),
            label: self.label,
            fps: self.fps,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T: Scalar> {
    pub sequences: Vec<MotionSequence<T>>,
    pub class_names: Vec<String>,
    pub skeleton: Skeleton<T>,
    pub fps: u32,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        sequences: Vec<MotionSequence<T>>,
        class_names: Vec<String>,
        skeleton: Skeleton<T>,
        fps: u32,
    ) -> Result<Self> {
        let ds = Self {
            sequences,
            class_names,
            skeleton,
            fps,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::validation("dataset declares no classes"));
        }
        let mut seen = HashSet::new();
        for n in &self.class_names {
            if !seen.insert(n) {
                return Err(Error::validation(format!("duplicate class name `{n}`")));
            }
        }
        for (i, s) in self.sequences.iter().enumerate() {
            if s.label >= self.class_names.len() {
                return Err(Error::Schema {
                    record: i,
                    field: "label".into(),
                    message: format!(
                        "label {} out of range for {} classes",
                        s.label,
                        self.class_names.len()
                    ),
                });
            }
            if s.frames.is_empty() {
                return Err(Error::Schema {
                    record: i,
                    field: "frames".into(),
                    message: "sequence has no frames".into(),
                });
            }
            if let Some(t) = s.frames.iter().position(|f| !f.is_finite()) {
                return Err(Error::Schema {
                    record: i,
                    field: format!("frames[{t}]"),
                    message: "non-finite value".into(),
                });
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    pub fn of_classes(&self, classes: &[usize]) -> Vec<MotionSequence<T>> {
        self.sequences
            .iter()
            .filter(|s| classes.contains(&s.label))
            .cloned()
            .collect()
    }

    pub fn count_per_class(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes()];
        for s in &self.sequences {
            c[s.label] += 1;
        }
        c
    }

    /// Seeded per-class split; returns `(train, held_out)` with about
    /// `holdout` of each class in the second set.
    pub fn stratified_split(&self, holdout: f64, seed: u64) -> (Vec<MotionSequence<T>>, Vec<MotionSequence<T>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for c in 0..self.num_classes() {
            let mut idx: Vec<usize> = (0..self.sequences.len())
                .filter(|&i| self.sequences[i].label == c)
                .collect();
            idx.shuffle(&mut rng);
            let n_test = ((idx.len() as f64) * holdout).round() as usize;
            for (k, i) in idx.into_iter().enumerate() {
                let s = self.sequences[i].clone();
                if k < n_test {
                    test.push(s);
                } else {
                    train.push(s);
                }
            }
        }
        (train, test)
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            sequences: self.sequences.iter().map(MotionSequence::cast).collect(),
            class_names: self.class_names.clone(),
            skeleton: self.skeleton.cast(),
            fps: self.fps,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SequenceRecord {
    label: usize,
    frames: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct FileOut<'a> {
    version: u32,
    fps: u32,
    class_names: &'a [String],
    skeleton: Skeleton<f64>,
    sequences: Vec<SequenceRecord>,
}

/// Serialize to the canonical JSON document.
pub fn dataset_to_json<T: Scalar>(ds: &Dataset<T>) -> Result<String> {
    let doc = FileOut {
        version: FORMAT_VERSION,
        fps: ds.fps,
        class_names: &ds.class_names,
        skeleton: ds.skeleton.cast(),
        sequences: ds
            .sequences
            .iter()
            .map(|s| SequenceRecord {
                label: s.label,
                frames: s
                    .to_vectors()
                    .into_iter()
                    .map(|r| r.into_iter().map(Scalar::to_f64_lossless).collect())
                    .collect(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn save_dataset<T: Scalar>(ds: &Dataset<T>, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_json(ds)?)?;
    Ok(())
}

fn schema(record: usize, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        record,
        field: field.into(),
        message: message.into(),
    }
}

/// Parse and validate a canonical JSON document. Sequences keep file order.
pub fn dataset_from_json<T: Scalar>(text: &str) -> Result<Dataset<T>> {
    let root: Value = serde_json::from_str(text)?;
    let obj = root
        .as_object()
        .ok_or_else(|| Error::validation("dataset file must be a JSON object"))?;
    let version = obj.get("version").and_then(Value::as_u64);
    if version != Some(FORMAT_VERSION as u64) {
        return Err(Error::validation(format!(
            "unsupported dataset version {version:?}, expected {FORMAT_VERSION}"
        )));
    }
    let fps = obj
        .get("fps")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::validation("missing or invalid `fps`"))? as u32;
    let class_names: Vec<String> = serde_json::from_value(
        obj.get("class_names")
            .cloned()
            .ok_or_else(|| Error::validation("missing `class_names`"))?,
    )?;
    let skeleton: Skeleton<T> = serde_json::from_value(
        obj.get("skeleton")
            .cloned()
            .ok_or_else(|| Error::validation("missing `skeleton`"))?,
    )
    .map_err(|e| Error::validation(format!("invalid skeleton: {e}")))?;
    let records = obj
        .get("sequences")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::validation("missing `sequences` array"))?;

    let mut sequences = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let label = rec
            .get("label")
            .ok_or_else(|| schema(i, "label", "missing"))?
            .as_u64()
            .ok_or_else(|| schema(i, "label", "not a non-negative integer"))? as usize;
        if label >= class_names.len() {
            return Err(schema(
                i,
                "label",
                format!("label {label} out of range for {} classes", class_names.len()),
            ));
        }
        let frames = rec
            .get("frames")
            .ok_or_else(|| schema(i, "frames", "missing"))?
            .as_array()
            .ok_or_else(|| schema(i, "frames", "not an array"))?;
        if frames.is_empty() {
            return Err(schema(i, "frames", "sequence has no frames"));
        }
        let mut parsed = Vec::with_capacity(frames.len());
        for (t, fr) in frames.iter().enumerate() {
            let field = format!("frames[{t}]");
            let arr = fr
                .as_array()
                .ok_or_else(|| schema(i, field.clone(), "not an array"))?;
            if arr.len() != FRAME_DIM {
                return Err(schema(
                    i,
                    field,
                    format!("expected {FRAME_DIM} numbers, got {}", arr.len()),
                ));
            }
            let mut row = Vec::with_capacity(FRAME_DIM);
            for v in arr {
                let x = v
                    .as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| schema(i, field.clone(), "non-numeric or non-finite entry"))?;
                row.push(T::lit(x));
            }
            parsed.push(vector_to_frame(&row)?);
        }
        sequences.push(MotionSequence {
            frames: parsed,
            label,
            fps,
        });
    }
    Dataset::new(sequences, class_names, skeleton, fps)
}

pub fn load_dataset<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let text = std::fs::read_to_string(path)?;
    dataset_from_json(&text)
}

/// Ordered, disjoint class groups, one per task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSchedule {
    pub tasks: Vec<Vec<usize>>,
    pub classes_per_task: usize,
}

impl TaskSchedule {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn all_classes(&self) -> Vec<usize> {
        self.tasks.iter().flatten().copied().collect()
    }

    /// Classes of tasks strictly before `task`.
    pub fn seen_before(&self, task: usize) -> Vec<usize> {
        self.tasks[..task].iter().flatten().copied().collect()
    }

    /// Index of the task that introduces `class`.
    pub fn task_of(&self, class: usize) -> Option<usize> {
        self.tasks.iter().position(|t| t.contains(&class))
    }
}

/// Consecutive groups of `classes_per_task` classes; a remainder forms a
/// smaller final task. The default order is the dataset's class order.
pub fn split_tasks<T: Scalar>(
    dataset: &Dataset<T>,
    classes_per_task: usize,
    class_order: Option<&[usize]>,
) -> Result<TaskSchedule> {
    let n = dataset.num_classes();
    if classes_per_task == 0 {
        return Err(Error::validation("classes_per_task must be at least 1"));
    }
    if classes_per_task > n {
        return Err(Error::validation(format!(
            "classes_per_task {classes_per_task} exceeds the {n} available classes"
        )));
    }
    let order: Vec<usize> = match class_order {
        Some(o) => {
            let mut sorted = o.to_vec();
            sorted.sort_unstable();
            if sorted != (0..n).collect::<Vec<_>>() {
                return Err(Error::validation(format!(
                    "class order {o:?} is not a permutation of 0..{n}"
                )));
            }
            o.to_vec()
        }
        None => (0..n).collect(),
    };
    Ok(TaskSchedule {
        tasks: order.chunks(classes_per_task).map(<[usize]>::to_vec).collect(),
        classes_per_task,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_dataset(classes: usize) -> Dataset<f64> {
        let names = (0..classes).map(|c| format!("c{c}")).collect();
        let seqs = (0..classes)
            .map(|c| MotionSequence::new(vec![PoseFrame::identity(); 2], c).unwrap())
            .collect();
        Dataset::new(seqs, names, Skeleton::smpl(), 20).unwrap()
    }

    #[test]
    fn zero_and_identity_frames_flatten_as_documented() {
        assert_eq!(frame_to_vector(&PoseFrame::<f64>::zeros()), vec![0.0; FRAME_DIM]);
        let mut f = PoseFrame::<f64>::identity();
        f.root_disp = [1.0, 2.0, 3.0];
        let v = frame_to_vector(&f);
        assert_eq!(v.len(), FRAME_DIM);
        assert_eq!(&v[144..], &[1.0, 2.0, 3.0]);
        for j in 0..NUM_JOINTS {
            assert_eq!(&v[j * 6..j * 6 + 6], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        }
    }

    proptest! {
        #[test]
        fn frame_vector_round_trip(v in prop::collection::vec(-10.0f64..10.0, FRAME_DIM)) {
            let f = vector_to_frame(&v).unwrap();
            prop_assert_eq!(frame_to_vector(&f), v);
        }
    }

    #[test]
    fn minimal_file_loads() {
        let frame: Vec<String> = frame_to_vector(&PoseFrame::<f64>::identity())
            .iter()
            .map(|v| v.to_string())
            .collect();
        let skel = serde_json::to_string(&Skeleton::<f64>::smpl()).unwrap();
        let text = format!(
            r#"{{"version":1,"fps":20,"class_names":["walk"],"skeleton":{skel},"sequences":[{{"label":0,"frames":[[{f}],[{f}]]}}]}}"#,
            f = frame.join(",")
        );
        let ds: Dataset<f64> = dataset_from_json(&text).unwrap();
        assert_eq!(ds.sequences.len(), 1);
        assert_eq!(ds.sequences[0].len(), 2);

        let bad = text.replace(r#""label":0"#, r#""label":1"#);
        match dataset_from_json::<f64>(&bad) {
            Err(Error::Schema { record, field, .. }) => {
                assert_eq!(record, 0);
                assert_eq!(field, "label");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
        let short = text.replacen(&format!("[{}]", frame.join(",")), &format!("[{}]", frame[1..].join(",")), 1);
        let err = dataset_from_json::<f64>(&short).unwrap_err().to_string();
        assert!(err.contains("frames[0]"), "{err}");
    }

    #[test]
    fn duplicate_class_names_are_rejected() {
        let mut ds = tiny_dataset(2);
        ds.class_names[1] = "c0".into();
        assert!(ds.validate().is_err());
    }

    #[test]
    fn recenter_moves_first_root_to_origin() {
        let mut a = PoseFrame::<f64>::identity();
        a.root_disp = [1.0, 2.0, 3.0];
        let mut b = a.clone();
        b.root_disp = [2.0, 2.0, 3.0];
        let mut s = MotionSequence::new(vec![a, b], 0).unwrap();
        s.recenter();
        assert_eq!(s.frames[0].root_disp, [0.0; 3]);
        assert_eq!(s.frames[1].root_disp, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn task_split_shapes() {
        let s = split_tasks(&tiny_dataset(12), 2, None).unwrap();
        assert_eq!(s.num_tasks(), 6);
        assert_eq!(s.tasks[0], vec![0, 1]);
        assert_eq!(s.tasks[1], vec![2, 3]);
        assert_eq!(split_tasks(&tiny_dataset(4), 4, None).unwrap().num_tasks(), 1);
        let sizes: Vec<usize> = split_tasks(&tiny_dataset(5), 2, None)
            .unwrap()
            .tasks
            .iter()
            .map(Vec::len)
            .collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        assert!(split_tasks(&tiny_dataset(3), 4, None).is_err());
        assert!(split_tasks(&tiny_dataset(3), 0, None).is_err());
        let custom = split_tasks(&tiny_dataset(4), 2, Some(&[3, 1, 0, 2])).unwrap();
        assert_eq!(custom.tasks, vec![vec![3, 1], vec![0, 2]]);
        assert!(split_tasks(&tiny_dataset(4), 2, Some(&[0, 0, 1, 2])).is_err());
    }
}
