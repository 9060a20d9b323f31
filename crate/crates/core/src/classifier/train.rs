use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{argmax, batch_loss, segment_input, softmax, ClassBalance, ClassifierParams};
use crate::dataset::{AnnotatedVideo, CoarseLabel, Segment, StepRef};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::metrics::Detection;
use crate::optim::Adam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Validation is scored at epoch 0, every `eval_every` epochs and at the
    /// last epoch.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: 256,
            beta: 0.9999,
            learning_rate: 1e-3,
            epochs: 1200,
            eval_every: 20,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.eval_every == 0 {
            return Err(Error::invalid(
                "classifier config: hidden and eval_every must be positive",
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "classifier config: learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        ClassBalance::new(self.beta, [1; CoarseLabel::COUNT]).map(|_| ())
    }
}

/// One teacher-forced training input.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub label: CoarseLabel,
}

/// Examples from a video's ground-truth segments. Steps contribute their
/// text feature; undefined segments, and every segment when `use_text` is
/// off, get a zero text vector.
pub fn segment_examples(
    video: &AnnotatedVideo,
    frames: &FeatureMatrix,
    text: &FeatureMatrix,
    use_text: bool,
) -> Result<Vec<Example>> {
    video
        .segments
        .iter()
        .map(|s| {
            let feature = step_feature(text, s.step, use_text)?;
            Ok(Example {
                input: segment_input(frames, s.segment, &feature)?,
                label: s.mistake.coarse(),
            })
        })
        .collect()
}

fn step_feature(text: &FeatureMatrix, step: StepRef, use_text: bool) -> Result<Vec<f64>> {
    match step {
        StepRef::Defined(k) if use_text => {
            if k == 0 || k > text.rows() {
                return Err(Error::invalid(format!(
                    "step {k} has no text feature ({} steps)",
                    text.rows()
                )));
            }
            Ok(text.row(k - 1).to_vec())
        }
        _ => Ok(vec![0.0; text.dim()]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_score: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    /// Selected parameters, rounded to `f32`.
    pub params: ClassifierParams,
    pub epoch: usize,
    /// Validation score of the selected parameters, if validation ran.
    pub val_score: Option<f64>,
    pub balance: ClassBalance,
    pub log: Vec<ClassifierLog>,
}

/// Full-batch Adam on the class-balanced loss. With `evaluate`, the
/// parameters scoring highest on it are kept (earlier epochs win ties);
/// without it, the final parameters are returned.
pub fn train_classifier(
    train: &[Example],
    cfg: &ClassifierConfig,
    mut evaluate: Option<&mut dyn FnMut(&ClassifierParams) -> Result<f64>>,
) -> Result<TrainedClassifier> {
    cfg.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::invalid("no classifier training examples"))?;
    let width = first.input.len();
    if let Some(bad) = train.iter().find(|e| e.input.len() != width) {
        return Err(Error::invalid(format!(
            "classifier inputs disagree in width: {width} vs {}",
            bad.input.len()
        )));
    }
    let labels: Vec<CoarseLabel> = train.iter().map(|e| e.label).collect();
    let balance = ClassBalance::from_labels(cfg.beta, labels.iter().copied())?;
    for label in CoarseLabel::ALL {
        balance.weight(label)?;
    }
    let inputs = Array2::from_shape_vec(
        (train.len(), width),
        train.iter().flat_map(|e| e.input.iter().copied()).collect(),
    )
    .expect("rows checked above");

    let mut params = ClassifierParams::init(width, cfg.hidden, cfg.seed)?;
    let mut adam = Adam::new(&params, cfg.learning_rate);
    let mut log = Vec::new();
    let mut best: Option<(ClassifierParams, usize, f64)> = None;
    let mut score = |params: &ClassifierParams,
                     epoch: usize,
                     loss: f64,
                     log: &mut Vec<ClassifierLog>|
     -> Result<()> {
        let val_score = match evaluate.as_mut() {
            Some(f) => Some(f(params)?),
            None => None,
        };
        log.push(ClassifierLog {
            epoch,
            train_loss: loss,
            val_score,
        });
        if let Some(s) = val_score {
            if best.as_ref().is_none_or(|b| s > b.2) {
                best = Some((params.clone(), epoch, s));
            }
        }
        Ok(())
    };

    let (initial, _) = batch_loss(&params, &inputs, &labels, &balance, false)?;
    score(&params, 0, initial, &mut log)?;
    for epoch in 1..=cfg.epochs {
        let (loss, grads) =
            batch_loss(&params, &inputs, &labels, &balance, true).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("classifier epoch {epoch}: {m}")),
                other => other,
            })?;
        adam.step(&mut params, &grads.expect("gradients requested"));
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            score(&params, epoch, loss, &mut log)?;
        }
    }

    let (mut params, epoch) = match best {
        Some((p, e, _)) => (p, e),
        None => (params, cfg.epochs),
    };
    params.round_to_f32();
    let val_score = match evaluate {
        Some(f) => Some(f(&params)?),
        None => None,
    };
    Ok(TrainedClassifier {
        params,
        epoch,
        val_score,
        balance,
        log,
    })
}

/// Classifies each segment; confidence is the softmax probability of the
/// predicted class.
pub fn detect_mistakes(
    params: &ClassifierParams,
    video_id: &str,
    segments: &[(StepRef, Segment)],
    frames: &FeatureMatrix,
    text: &FeatureMatrix,
    use_text: bool,
) -> Result<Vec<Detection>> {
    if segments.is_empty() {
        return Ok(Vec::new());
    }
    let mut rows = Vec::with_capacity(segments.len() * params.input_dim());
    for &(step, seg) in segments {
        rows.extend(segment_input(
            frames,
            seg,
            &step_feature(text, step, use_text)?,
        )?);
    }
    let inputs = Array2::from_shape_vec((segments.len(), params.input_dim()), rows)
        .map_err(|_| Error::invalid("segment inputs do not match the classifier width"))?;
    let z = params.logits(&inputs)?;
    Ok(segments
        .iter()
        .zip(z.rows())
        .map(|(&(step, segment), z)| {
            let c = argmax(z);
            Detection {
                video_id: video_id.to_string(),
                step,
                segment,
                label: CoarseLabel::from_index(c).expect("three logits"),
                confidence: softmax(z)[c],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{synth_corpus, SynthConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> ClassifierConfig {
        ClassifierConfig {
            hidden: 32,
            epochs: 300,
            learning_rate: 1e-2,
            ..Default::default()
        }
    }

    /// Three Gaussian blobs, one per class, with unequal class sizes.
    fn blobs(seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [
            [2.0, 0.0, 0.0, 1.0],
            [0.0, 2.0, 0.0, -1.0],
            [0.0, 0.0, 2.0, 0.5],
        ];
        let sizes = [40, 12, 5];
        let mut out = Vec::new();
        for (c, (center, n)) in centers.iter().zip(sizes).enumerate() {
            for _ in 0..n {
                out.push(Example {
                    input: center
                        .iter()
                        .map(|x| x + rng.random_range(-0.4..0.4))
                        .collect(),
                    label: CoarseLabel::from_index(c).unwrap(),
                });
            }
        }
        out
    }

    fn accuracy(params: &ClassifierParams, data: &[Example]) -> f64 {
        let inputs = Array2::from_shape_vec(
            (data.len(), data[0].input.len()),
            data.iter().flat_map(|e| e.input.clone()).collect(),
        )
        .unwrap();
        let z = params.logits(&inputs).unwrap();
        let hits = z
            .rows()
            .into_iter()
            .zip(data)
            .filter(|(z, e)| argmax(z.view()) == e.label.index())
            .count();
        hits as f64 / data.len() as f64
    }

    #[test]
    fn separable_blobs_are_learned() {
        let data = blobs(1);
        let r = train_classifier(&data, &small_cfg(), None).unwrap();
        assert!(accuracy(&r.params, &data) >= 0.95);
        assert_eq!(r.balance.counts, [40, 12, 5]);
        assert_eq!(r.epoch, 300);
    }

    #[test]
    fn same_seed_same_params() {
        let data = blobs(2);
        let cfg = ClassifierConfig {
            epochs: 30,
            ..small_cfg()
        };
        let a = train_classifier(&data, &cfg, None).unwrap();
        let b = train_classifier(&data, &cfg, None).unwrap();
        assert_eq!(a.params, b.params);
        let c = train_classifier(&data, &ClassifierConfig { seed: 1, ..cfg }, None).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn missing_class_is_an_error() {
        let data: Vec<Example> = blobs(3)
            .into_iter()
            .filter(|e| e.label == CoarseLabel::Correct)
            .collect();
        let err = train_classifier(&data, &small_cfg(), None).unwrap_err();
        assert!(err.to_string().contains("no training samples"), "{err}");
    }

    #[test]
    fn validation_picks_the_best_epoch() {
        let data = blobs(4);
        let cfg = ClassifierConfig {
            epochs: 100,
            eval_every: 10,
            ..small_cfg()
        };
        let mut calls = 0;
        // A score that peaks at the fourth evaluation (epoch 30).
        let mut peaked = |_: &ClassifierParams| {
            calls += 1;
            Ok(-((calls as f64) - 4.0).abs())
        };
        let r = train_classifier(&data, &cfg, Some(&mut peaked)).unwrap();
        assert_eq!(r.epoch, 30);
        assert_eq!(r.log.len(), 11);
        assert_eq!(r.log[3].val_score, Some(0.0));

        let mut flat = |_: &ClassifierParams| Ok(0.5);
        let r = train_classifier(&data, &cfg, Some(&mut flat)).unwrap();
        assert_eq!(r.epoch, 0);
        let mut init = ClassifierParams::init(4, 32, 0).unwrap();
        init.round_to_f32();
        assert_eq!(r.params, init);
    }

    #[test]
    fn teacher_forced_classifier_recovers_clean_labels() {
        let synth = synth_corpus(&SynthConfig {
            tasks: 3,
            videos_per_task: 6,
            dim: 16,
            noise_sigma: 0.0,
            p_exec_mistake: 0.4,
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        let ds = &synth.dataset;
        let mut data = Vec::new();
        for v in &ds.corpus.videos {
            data.extend(
                segment_examples(
                    v,
                    &ds.video_features[&v.video_id],
                    &ds.step_features[&v.task],
                    true,
                )
                .unwrap(),
            );
        }
        let cfg = ClassifierConfig {
            hidden: 64,
            epochs: 600,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let r = train_classifier(&data, &cfg, None).unwrap();
        for v in &ds.corpus.videos {
            let segs: Vec<(StepRef, Segment)> =
                v.segments.iter().map(|s| (s.step, s.segment)).collect();
            let dets = detect_mistakes(
                &r.params,
                &v.video_id,
                &segs,
                &ds.video_features[&v.video_id],
                &ds.step_features[&v.task],
                true,
            )
            .unwrap();
            for (d, s) in dets.iter().zip(&v.segments) {
                assert_eq!(
                    d.label,
                    s.mistake.coarse(),
                    "{} {:?}",
                    v.video_id,
                    s.segment
                );
                assert!(d.confidence > 0.0 && d.confidence <= 1.0);
            }
        }
    }

    #[test]
    fn detections_follow_the_segments() {
        let params = ClassifierParams::init(4, 8, 0).unwrap();
        let frames =
            FeatureMatrix::new(4, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 0.0]).unwrap();
        let text = FeatureMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(detect_mistakes(&params, "v", &[], &frames, &text, true)
            .unwrap()
            .is_empty());
        let segs = [
            (StepRef::Defined(2), Segment::new(0, 2).unwrap()),
            (StepRef::Undefined, Segment::new(2, 4).unwrap()),
        ];
        let dets = detect_mistakes(&params, "v", &segs, &frames, &text, true).unwrap();
        assert_eq!(dets.len(), 2);
        for (d, (step, seg)) in dets.iter().zip(segs) {
            assert_eq!((d.step, d.segment), (step, seg));
            assert!(d.confidence >= 1.0 / 3.0 && d.confidence <= 1.0);
        }
        let bad = [(StepRef::Defined(3), Segment::new(0, 1).unwrap())];
        assert!(detect_mistakes(&params, "v", &bad, &frames, &text, true).is_err());
        // Without text the step index is not consulted.
        assert!(detect_mistakes(&params, "v", &bad, &frames, &text, false).is_ok());
    }
}
