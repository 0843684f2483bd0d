//! Training loops for the argument and frame-identification models.
//!
//! One update per item (instance, tree or sentence), with a shuffle per
//! epoch drawn from `config.data_seed`. After every epoch the model is scored
//! on the dev set and the best epoch (strictly better than all earlier ones)
//! is kept.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{clip_gradients, Adam, Gradients, Graph, NodeId, ParameterStore};
use crate::checkpoint::Selection;
use crate::config::Config;
use crate::corpus::{
    build_frame_instances, build_instances, framenet_scaffold_instances, AnnotatedSentence,
    ArgInstance, FrameIdInstance, FrameOntology, PretrainedEmbeddings, Vocabulary,
};
use crate::error::{Error, Result};
use crate::frameid::{frameid_ensemble, FrameScores};
use crate::metrics::{argument_triples, score_arguments, score_frames};
use crate::model::{ArgModel, FrameIdModel, ModelSpec, TargetRef, TrainNoise};
use crate::scaffold::ScaffoldInstance;

/// Corpora and resources shared by both training loops.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [AnnotatedSentence],
    pub dev: &'a [AnnotatedSentence],
    /// Syntactic scaffold sentences; used only when `config.use_scaffold`.
    pub trees: &'a [ScaffoldInstance],
    pub ontology: &'a FrameOntology,
    pub pretrained: Option<&'a PretrainedEmbeddings>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// Dev F1 (arguments) or dev accuracy (frames).
    pub dev: f64,
}

#[derive(Debug, Clone)]
pub struct Trained<M> {
    /// Parameters of the selected epoch.
    pub model: M,
    pub selection: Selection,
    pub history: Vec<EpochLog>,
}

fn noise_for(config: &Config) -> TrainNoise {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    TrainNoise {
        rng,
        dropout: config.dropout,
        unk_prob: config.unk_prob,
    }
}

fn validate_inputs(data: &TrainData<'_>) -> Result<()> {
    data.ontology.validate()?;
    for (name, corpus) in [("train", data.train), ("dev", data.dev)] {
        for (k, s) in corpus.iter().enumerate() {
            s.validate()
                .map_err(|e| Error::Validation(format!("{name} sentence {}: {e}", s.key(k))))?;
        }
    }
    Ok(())
}

/// Loss value and clipped gradients of one item.
fn gradients(
    store: &ParameterStore<f64>,
    clip: f64,
    what: &str,
    build: impl FnOnce(&mut Graph<'_, f64>) -> Result<NodeId>,
) -> Result<(f64, Gradients<f64>)> {
    let mut g = Graph::new(store);
    let loss = build(&mut g)?;
    let value = g.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss of {what} is {value}")));
    }
    let mut grads = g.backward(loss)?;
    clip_gradients(&mut grads, clip);
    Ok((value, grads))
}

fn keep_if_better(
    best: &mut Option<(f64, usize, ParameterStore<f64>)>,
    dev: f64,
    epoch: usize,
    store: &ParameterStore<f64>,
) {
    if best.as_ref().is_none_or(|(b, _, _)| dev > *b) {
        *best = Some((dev, epoch, store.clone()));
    }
}

enum ArgItem {
    Instance(usize),
    Tree(usize),
}

/// Micro F1 of single-model decoding over `instances`.
pub fn argument_f1(model: &ArgModel, instances: &[ArgInstance]) -> Result<f64> {
    let decoded = instances
        .par_iter()
        .map(|x| {
            let t = TargetRef {
                tokens: &x.tokens,
                pos: &x.pos,
                target: x.target,
                lu: &x.lu,
            };
            Ok(argument_triples(&model.decode(t, &x.frame)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<_> = instances
        .iter()
        .map(|x| argument_triples(&x.gold))
        .collect();
    Ok(score_arguments(&decoded, &gold)?.f1)
}

pub fn train_arg(config: &Config, data: TrainData<'_>) -> Result<Trained<ArgModel>> {
    config.validate()?;
    validate_inputs(&data)?;
    let trees: &[ScaffoldInstance] = if config.use_scaffold { data.trees } else { &[] };
    if !config.use_scaffold && !data.trees.is_empty() {
        log::warn!(
            "scaffold disabled; {} tree sentences ignored",
            data.trees.len()
        );
    }
    for t in trees {
        t.validate(config.max_span)?;
    }
    let b = config.max_span;
    let instances = build_instances(data.train, data.ontology, b)?;
    if instances.is_empty() && trees.is_empty() {
        return Err(Error::Validation("empty training corpus".into()));
    }
    let mut dev = build_instances(data.dev, data.ontology, b)?;
    if dev.is_empty() {
        log::warn!("no dev instances; selecting on training F1");
        dev = instances.clone();
    }
    let framenet_positives: Vec<BTreeSet<(usize, usize)>> = if config.use_scaffold {
        framenet_scaffold_instances(data.train, b)
            .into_iter()
            .map(|s| s.positive_spans)
            .collect()
    } else {
        Vec::new()
    };

    let vocab = Vocabulary::build(
        data.train
            .iter()
            .map(|s| (&s.tokens[..], &s.pos[..]))
            .chain(trees.iter().map(|t| (&t.tokens[..], &t.pos[..]))),
    );
    let spec = ModelSpec {
        config: config.clone(),
        vocab,
        ontology: data.ontology.clone(),
        pretrained: data.pretrained.cloned(),
    };
    let mut model = ArgModel::new(spec)?;
    let mut adam = Adam::new(config.adam(), &model.store);
    let mut noise = noise_for(config);
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.data_seed);
    let mut items: Vec<ArgItem> = (0..instances.len())
        .map(ArgItem::Instance)
        .chain((0..trees.len()).map(ArgItem::Tree))
        .collect();

    let mut history = Vec::with_capacity(config.epochs);
    let mut best = None;
    for epoch in 0..config.epochs {
        items.shuffle(&mut shuffle);
        let mut total = 0.0;
        for item in &items {
            let m = &model;
            let (value, grads) = match *item {
                ArgItem::Instance(k) => {
                    let x = &instances[k];
                    let t = TargetRef {
                        tokens: &x.tokens,
                        pos: &x.pos,
                        target: x.target,
                        lu: &x.lu,
                    };
                    let positives = framenet_positives.get(x.sentence);
                    gradients(&m.store, config.clip_norm, &x.id, |g| {
                        m.instance_loss(g, t, &x.frame, &x.gold, positives, Some(&mut noise))
                    })?
                }
                ArgItem::Tree(k) => {
                    let tr = &trees[k];
                    gradients(&m.store, config.clip_norm, &format!("tree {k}"), |g| {
                        m.scaffold_only_loss(
                            g,
                            &tr.tokens,
                            &tr.pos,
                            &tr.positive_spans,
                            Some(&mut noise),
                        )
                    })?
                }
            };
            adam.step(&mut model.store, &grads)?;
            total += value;
        }
        let f1 = argument_f1(&model, &dev)?;
        log::info!("epoch {epoch}: loss {total:.6} dev F1 {f1:.4}");
        history.push(EpochLog {
            epoch,
            loss: total,
            dev: f1,
        });
        keep_if_better(&mut best, f1, epoch, &model.store);
    }
    Ok(finish(model, best, history, |m| &mut m.store))
}

fn finish<M>(
    mut model: M,
    best: Option<(f64, usize, ParameterStore<f64>)>,
    history: Vec<EpochLog>,
    store: impl Fn(&mut M) -> &mut ParameterStore<f64>,
) -> Trained<M> {
    let selection = match best {
        Some((dev, epoch, params)) => {
            *store(&mut model) = params;
            Selection {
                best_dev: Some(dev),
                best_epoch: Some(epoch),
            }
        }
        None => Selection::default(),
    };
    Trained {
        model,
        selection,
        history,
    }
}

/// Frame instances grouped by sentence, in corpus order.
fn by_sentence(instances: Vec<FrameIdInstance>) -> Vec<Vec<FrameIdInstance>> {
    let mut groups: BTreeMap<usize, Vec<FrameIdInstance>> = BTreeMap::new();
    for x in instances {
        groups.entry(x.sentence).or_default().push(x);
    }
    groups.into_values().collect()
}

/// Ensembled frame predictions (frame indices) for the targets of one
/// sentence.
pub fn predict_frames(models: &[FrameIdModel], group: &[FrameIdInstance]) -> Result<Vec<usize>> {
    let Some(first) = group.first() else {
        return Ok(Vec::new());
    };
    let targets: Vec<_> = group.iter().map(|x| (x.target, x.lu.as_str())).collect();
    let per_model = models
        .iter()
        .map(|m| m.frame_scores(&first.tokens, &first.pos, &targets))
        .collect::<Result<Vec<_>>>()?;
    (0..group.len())
        .map(|k| {
            let members: Vec<FrameScores<f64>> = per_model.iter().map(|s| s[k].clone()).collect();
            frameid_ensemble(&members)
        })
        .collect()
}

/// Exact-match accuracy of single-model frame predictions.
pub fn frame_accuracy(model: &FrameIdModel, groups: &[Vec<FrameIdInstance>]) -> Result<f64> {
    let names = model.spec.ontology.frame_names();
    let predicted = groups
        .par_iter()
        .map(|grp| {
            Ok(predict_frames(std::slice::from_ref(model), grp)?
                .into_iter()
                .map(|f| names[f])
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    let gold: Vec<&str> = groups
        .iter()
        .flatten()
        .map(|x| x.frame.as_deref().unwrap_or(""))
        .collect();
    Ok(score_frames(&predicted, &gold)?.accuracy)
}

pub fn train_frame(config: &Config, data: TrainData<'_>) -> Result<Trained<FrameIdModel>> {
    config.validate()?;
    validate_inputs(&data)?;
    let train = by_sentence(build_frame_instances(data.train, data.ontology, true)?);
    if train.is_empty() {
        return Err(Error::Validation("empty training corpus".into()));
    }
    let mut dev = by_sentence(build_frame_instances(data.dev, data.ontology, false)?);
    if dev.is_empty() {
        log::warn!("no dev targets; selecting on training accuracy");
        dev = train.clone();
    }
    let vocab = Vocabulary::build(data.train.iter().map(|s| (&s.tokens[..], &s.pos[..])));
    let spec = ModelSpec {
        config: config.clone(),
        vocab,
        ontology: data.ontology.clone(),
        pretrained: data.pretrained.cloned(),
    };
    let mut model = FrameIdModel::new(spec)?;
    let mut adam = Adam::new(config.adam(), &model.store);
    let mut noise = noise_for(config);
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.data_seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut history = Vec::with_capacity(config.epochs);
    let mut best = None;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for &k in &order {
            let grp = &train[k];
            let targets: Vec<_> = grp
                .iter()
                .map(|x| (x.target, x.lu.as_str(), x.frame.as_deref().unwrap_or("")))
                .collect();
            let m = &model;
            let (value, grads) = gradients(&m.store, config.clip_norm, &grp[0].id, |g| {
                m.sentence_loss(g, &grp[0].tokens, &grp[0].pos, &targets, Some(&mut noise))
            })?;
            adam.step(&mut model.store, &grads)?;
            total += value;
        }
        let acc = frame_accuracy(&model, &dev)?;
        log::info!("epoch {epoch}: loss {total:.6} dev accuracy {acc:.4}");
        history.push(EpochLog {
            epoch,
            loss: total,
            dev: acc,
        });
        keep_if_better(&mut best, acc, epoch, &model.store);
    }
    Ok(finish(model, best, history, |m| &mut m.store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_corpus;

    fn ontology() -> FrameOntology {
        FrameOntology::new(
            BTreeMap::from([
                (
                    "Motion".to_string(),
                    vec!["Theme".to_string(), "Goal".to_string()],
                ),
                (
                    "Giving".to_string(),
                    vec!["Donor".to_string(), "Theme".to_string()],
                ),
            ]),
            BTreeMap::from([
                ("go.v".to_string(), vec!["Motion".to_string()]),
                ("give.v".to_string(), vec!["Giving".to_string()]),
            ]),
        )
        .unwrap()
    }

    fn corpus() -> Vec<AnnotatedSentence> {
        parse_corpus(
            r#"{"tokens":["she","went","home"],"pos":["PRP","VBD","NN"],"annotations":[{"target":[1,1],"lu":"go.v","frame":"Motion","elements":[{"role":"Theme","span":[0,0]},{"role":"Goal","span":[2,2]}]}]}
{"tokens":["he","gave","it","away"],"pos":["PRP","VBD","PRP","RB"],"annotations":[{"target":[1,1],"lu":"give.v","frame":"Giving","elements":[{"role":"Donor","span":[0,0]},{"role":"Theme","span":[2,2]}]}]}"#,
            "t",
        )
        .unwrap()
    }

    fn tiny() -> Config {
        let mut c = Config::default();
        for kv in [
            "hidden_dim=4",
            "mlp_dim=4",
            "word_dim=3",
            "pos_dim=2",
            "frame_dim=2",
            "lu_dim=2",
            "role_dim=2",
            "scaffold_label_dim=2",
            "distance_dim=2",
            "max_span=3",
            "epochs=2",
            "seed=3",
        ] {
            c.set(kv).unwrap();
        }
        c
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let ont = ontology();
        let data = TrainData {
            train: &[],
            dev: &[],
            trees: &[],
            ontology: &ont,
            pretrained: None,
        };
        assert!(matches!(
            train_arg(&tiny(), data),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            train_frame(&tiny(), data),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let ont = ontology();
        let c = corpus();
        let data = TrainData {
            train: &c,
            dev: &c,
            trees: &[],
            ontology: &ont,
            pretrained: None,
        };
        let a = train_arg(&tiny(), data).unwrap();
        let b = train_arg(&tiny(), data).unwrap();
        assert_eq!(a.history, b.history);
        for ((_, x), (_, y)) in a.model.store.iter().zip(b.model.store.iter()) {
            assert_eq!(x.value, y.value);
        }
        assert_eq!(a.history.len(), 2);
        assert!(a.history.iter().all(|e| e.loss.is_finite()));
    }

    #[test]
    fn single_candidate_frames_are_always_right() {
        let ont = ontology();
        let c = corpus();
        let data = TrainData {
            train: &c,
            dev: &c,
            trees: &[],
            ontology: &ont,
            pretrained: None,
        };
        let t = train_frame(&tiny(), data).unwrap();
        assert_eq!(t.history[0].dev, 1.0);
        assert_eq!(t.selection.best_epoch, Some(0));
    }

    #[test]
    fn tree_only_training_runs() {
        let ont = ontology();
        let trees = vec![ScaffoldInstance {
            tokens: vec!["a".into(), "b".into(), "c".into()],
            pos: vec!["X".into(), "Y".into(), "Z".into()],
            positive_spans: BTreeSet::from([(0, 2), (1, 2)]),
            source: crate::scaffold::ScaffoldSource::Treebank,
        }];
        let data = TrainData {
            train: &[],
            dev: &[],
            trees: &trees,
            ontology: &ont,
            pretrained: None,
        };
        let mut cfg = tiny();
        assert!(train_arg(&cfg, data).is_err());
        cfg.use_scaffold = true;
        let t = train_arg(&cfg, data).unwrap();
        assert_eq!(t.history.len(), 2);
    }
}
