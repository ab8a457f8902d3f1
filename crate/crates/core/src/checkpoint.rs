//! JSON checkpoints for [`LanguageModel`].
//!
//! A checkpoint is one JSON document:
//!
//! ```text
//! { "format_version": 1, "kind": "neural" | "ngram", "vocab": [...],
//!   "context_window": k, "dims": {...}, "params": {...} }
//! ```
//!
//! Neural parameters are stored as named row-major float arrays. Floats are
//! written in shortest round-trip form and parsed exactly, so a reloaded
//! model reproduces log-probabilities bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LanguageModel, ModelKind, NGramParams, NeuralDims, NeuralParams};
use crate::vocab::{TokenId, Vocab};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Document {
    format_version: u32,
    kind: ModelKind,
    vocab: Vocab,
    context_window: usize,
    dims: Dims,
    params: Params,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Dims {
    Neural(NeuralDims),
    Ngram { order: usize, smoothing: f64 },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Params {
    Neural {
        embedding: Vec<f64>,
        hidden_weight: Vec<f64>,
        hidden_bias: Vec<f64>,
        output_weight: Vec<f64>,
        output_bias: Vec<f64>,
    },
    Ngram {
        contexts: Vec<Vec<TokenId>>,
        counts: Vec<Vec<u64>>,
    },
}

fn to_document(model: &LanguageModel) -> Document {
    let (dims, params) = if let Some(p) = model.neural_params() {
        let arrays: Vec<Vec<f64>> = p.named_arrays().map(|(_, a)| a.to_vec()).collect();
        let [embedding, hidden_weight, hidden_bias, output_weight, output_bias]: [Vec<f64>; 5] =
            arrays.try_into().expect("five parameter blocks");
        (
            Dims::Neural(p.dims()),
            Params::Neural {
                embedding,
                hidden_weight,
                hidden_bias,
                output_weight,
                output_bias,
            },
        )
    } else {
        let p = model
            .ngram_params()
            .expect("model is either neural or n-gram");
        let (contexts, counts) = p
            .counts()
            .iter()
            .map(|(c, n)| (c.clone(), n.clone()))
            .unzip();
        (
            Dims::Ngram {
                order: p.order(),
                smoothing: p.smoothing(),
            },
            Params::Ngram { contexts, counts },
        )
    };
    Document {
        format_version: FORMAT_VERSION,
        kind: model.kind(),
        vocab: model.vocab().clone(),
        context_window: model.context_window(),
        dims,
        params,
    }
}

fn from_document(doc: Document) -> Result<LanguageModel> {
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format_version {}",
            doc.format_version
        )));
    }
    let model = match (doc.kind, doc.dims, doc.params) {
        (
            ModelKind::Neural,
            Dims::Neural(dims),
            Params::Neural {
                embedding,
                hidden_weight,
                hidden_bias,
                output_weight,
                output_bias,
            },
        ) => {
            let params = NeuralParams::from_arrays(
                dims,
                [
                    embedding,
                    hidden_weight,
                    hidden_bias,
                    output_weight,
                    output_bias,
                ],
            )?;
            LanguageModel::neural(doc.vocab, params)?
        }
        (
            ModelKind::Ngram,
            Dims::Ngram { order, smoothing },
            Params::Ngram { contexts, counts },
        ) => {
            if contexts.len() != counts.len() {
                return Err(Error::Checkpoint(
                    "contexts and counts differ in length".into(),
                ));
            }
            let mut p = NGramParams::new(order, smoothing)?;
            let v = doc.vocab.len();
            for (ctx, row) in contexts.iter().zip(&counts) {
                if row.len() != v {
                    return Err(Error::Checkpoint(
                        "count row length differs from vocabulary".into(),
                    ));
                }
                for (tok, &n) in row.iter().enumerate() {
                    p.add_count(v, ctx, tok, n);
                }
            }
            LanguageModel::ngram(doc.vocab, p)?
        }
        (kind, _, _) => {
            return Err(Error::Checkpoint(format!(
                "dims/params do not match kind {kind:?}"
            )))
        }
    };
    if model.context_window() != doc.context_window {
        return Err(Error::Checkpoint(format!(
            "context_window {} does not match dims ({})",
            doc.context_window,
            model.context_window()
        )));
    }
    Ok(model)
}

pub fn to_json(model: &LanguageModel) -> Result<String> {
    let mut s = serde_json::to_string(&to_document(model))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json(text: &str) -> Result<LanguageModel> {
    from_document(serde_json::from_str(text)?)
}

pub fn save(model: &LanguageModel, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, to_json(model)?).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<LanguageModel> {
    let text = fs::read_to_string(path).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })?;
    from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::build_vocab;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn neural_round_trip_is_bit_identical(seed in 0u64..1_000_000, scale in 0.01f64..3.0) {
            let vocab = build_vocab("abc|").unwrap();
            let dims = NeuralDims::new(vocab.len(), 3, 5, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = LanguageModel::random(vocab, dims, scale, &mut rng).unwrap();
            let back = from_json(&to_json(&m).unwrap()).unwrap();
            prop_assert_eq!(&back, &m);
            for ctx in [vec![], vec![2, 3], vec![5, 4, 1]] {
                let a = m.logprobs(&ctx).unwrap();
                let b = back.logprobs(&ctx).unwrap();
                prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    #[test]
    fn ngram_round_trip() {
        let vocab = build_vocab("ab").unwrap();
        let prompt = vocab.encode("ab").unwrap();
        let resp = vocab.encode("ba").unwrap();
        let p = NGramParams::fit(&vocab, 3, 0.5, [(&prompt[..], &resp[..])]).unwrap();
        let m = LanguageModel::ngram(vocab, p).unwrap();
        let text = to_json(&m).unwrap();
        assert!(text.contains("\"kind\":\"ngram\""));
        let back = from_json(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn document_has_the_expected_fields() {
        let vocab = build_vocab("a").unwrap();
        let m = LanguageModel::uniform(vocab, NeuralDims::new(3, 2, 2, 1)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&to_json(&m).unwrap()).unwrap();
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["kind"], "neural");
        assert_eq!(v["context_window"], 1);
        assert_eq!(v["dims"]["hidden"], 2);
        assert_eq!(v["params"]["output_bias"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn rejects_wrong_version_and_shapes() {
        let vocab = build_vocab("a").unwrap();
        let m = LanguageModel::uniform(vocab, NeuralDims::new(3, 2, 2, 1)).unwrap();
        let text = to_json(&m).unwrap();
        let bad = text.replace("\"format_version\":1", "\"format_version\":2");
        assert!(matches!(from_json(&bad), Err(Error::Checkpoint(_))));
        let bad = text.replace("\"context_window\":1", "\"context_window\":3");
        assert!(matches!(from_json(&bad), Err(Error::Checkpoint(_))));
        let bad = text.replace("\"output_bias\":[0.0,0.0,0.0]", "\"output_bias\":[0.0]");
        assert!(from_json(&bad).is_err());
    }

    #[test]
    fn save_and_load_through_the_filesystem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/model.json");
        let vocab = build_vocab("xy").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = LanguageModel::random(vocab, NeuralDims::new(4, 2, 3, 2), 0.5, &mut rng).unwrap();
        save(&m, &path).unwrap();
        assert_eq!(load(&path).unwrap(), m);
    }
}
