//! Checkpoint directories: a manifest plus one parameter file per model.

use std::path::Path;

use serde::{Deserialize, Serialize};

use ror::analysis::{score, MetricReport};
use ror::corpus::{Corpus, Document, TypeSchema};
use ror::encoder::EmbeddingFile;
use ror::model::{predict_corpus, Detector, Ensemble, Model, TwoStage};
use ror::{DType, Scalar};

use crate::failure::{DataContext, Failure, Result};
use crate::run::write_atomic;

const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Single,
    Ensemble,
    /// Files are the detector, then the typing model.
    TwoStage,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub kind: Kind,
    pub precision: DType,
    pub files: Vec<String>,
}

pub enum Predictor<T> {
    Single(Model<T>),
    Ensemble(Ensemble<T>),
    TwoStage(TwoStage<T>),
}

impl<T: Scalar> Predictor<T> {
    fn models(&self) -> Vec<&Model<T>> {
        match self {
            Predictor::Single(m) => vec![m],
            Predictor::Ensemble(e) => e.members().iter().collect(),
            Predictor::TwoStage(t) => {
                let mut v = Vec::new();
                if let Detector::Model(d) = &t.detector {
                    v.push(d);
                }
                v.push(&t.classifier);
                v
            }
        }
    }

    /// The model whose schema and scoring options govern predictions.
    pub fn primary(&self) -> &Model<T> {
        self.models().last().expect("at least one model")
    }

    pub fn kind(&self) -> Kind {
        match self {
            Predictor::Single(_) => Kind::Single,
            Predictor::Ensemble(_) => Kind::Ensemble,
            Predictor::TwoStage(_) => Kind::TwoStage,
        }
    }

    pub fn predict_corpus(&self, corpus: &Corpus, ext: Option<&EmbeddingFile>) -> Result<Vec<Document>> {
        Ok(match self {
            Predictor::Single(m) => predict_corpus(m, corpus, ext)?,
            Predictor::Ensemble(e) => e.predict_corpus(corpus, ext)?,
            Predictor::TwoStage(t) => t.predict_corpus(corpus, ext)?,
        })
    }

    pub fn evaluate(&self, corpus: &Corpus, ext: Option<&EmbeddingFile>) -> Result<MetricReport> {
        let pred = self.predict_corpus(corpus, ext)?;
        score(&corpus.schema, &pred, &corpus.documents, self.primary().cfg.include_diagonal)
            .data(|| "scoring predictions".into())
    }

    pub fn set_workers(&mut self, workers: usize) {
        let set = |m: &mut Model<T>| m.cfg.workers = workers;
        match self {
            Predictor::Single(m) => set(m),
            Predictor::Ensemble(e) => {
                let mut members = e.members().to_vec();
                members.iter_mut().for_each(set);
                *e = Ensemble::new(members).expect("same members as before");
            }
            Predictor::TwoStage(t) => {
                if let Detector::Model(d) = &mut t.detector {
                    set(d);
                }
                set(&mut t.classifier);
            }
        }
    }

    pub fn save(&self, dir: &Path, precision: DType) -> Result<Manifest> {
        std::fs::create_dir_all(dir).data(|| format!("creating {}", dir.display()))?;
        let models = self.models();
        let files: Vec<String> = match self {
            Predictor::Single(_) => vec!["model.ckpt".into()],
            Predictor::Ensemble(_) => (0..models.len()).map(|i| format!("member{i}.ckpt")).collect(),
            Predictor::TwoStage(_) => vec!["detector.ckpt".into(), "classifier.ckpt".into()],
        };
        for (m, f) in models.iter().zip(&files) {
            let path = dir.join(f);
            m.save(&path, precision).data(|| format!("writing {}", path.display()))?;
        }
        let manifest = Manifest {
            format: "ror-checkpoint-dir".into(),
            kind: self.kind(),
            precision,
            files,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(&dir.join(MANIFEST), text.as_bytes())?;
        Ok(manifest)
    }

    pub fn load(dir: &Path, manifest: &Manifest) -> Result<Self> {
        let load = |f: &String| -> Result<Model<T>> {
            let path = dir.join(f);
            Model::<T>::load(&path).data(|| format!("loading {}", path.display()))
        };
        let models: Vec<Model<T>> = manifest.files.iter().map(load).collect::<Result<_>>()?;
        let bad = |msg: &str| Failure::Data(anyhow::anyhow!("{}: {msg}", dir.display()));
        Ok(match manifest.kind {
            Kind::Single if models.len() == 1 => Predictor::Single(models.into_iter().next().unwrap()),
            Kind::Ensemble if !models.is_empty() => Predictor::Ensemble(Ensemble::new(models)?),
            Kind::TwoStage if models.len() == 2 => {
                let mut it = models.into_iter();
                let (detector, classifier) = (it.next().unwrap(), it.next().unwrap());
                if detector.schema != classifier.schema {
                    return Err(bad("detector and classifier schemas differ"));
                }
                Predictor::TwoStage(TwoStage {
                    detector: Detector::Model(detector),
                    classifier,
                })
            }
            _ => return Err(bad("manifest lists the wrong number of model files")),
        })
    }

    pub fn schema(&self) -> &TypeSchema {
        &self.primary().schema
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).data(|| format!("reading checkpoint manifest {}", path.display()))?;
    let m: Manifest = serde_json::from_str(&text).data(|| format!("parsing {}", path.display()))?;
    if m.format != "ror-checkpoint-dir" {
        return Err(Failure::Data(anyhow::anyhow!("{} is not a checkpoint manifest", path.display())));
    }
    Ok(m)
}
