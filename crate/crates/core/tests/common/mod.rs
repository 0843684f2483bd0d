#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segrnn::config::Config;
use segrnn::corpus::{parse_corpus, AnnotatedSentence, Annotation, Element, FrameOntology, Span};
use segrnn::scaffold::ScaffoldInstance;

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub fn config(kvs: &[&str]) -> Config {
    let mut c = Config::default();
    for kv in kvs {
        c.set(kv).unwrap();
    }
    c
}

/// Small dimensions for fast tests.
pub fn tiny_config(seed: u64) -> Config {
    let mut c = config(&[
        "hidden_dim=4",
        "mlp_dim=5",
        "word_dim=3",
        "pos_dim=2",
        "frame_dim=3",
        "lu_dim=2",
        "role_dim=2",
        "scaffold_label_dim=2",
        "distance_dim=2",
        "max_distance=4",
        "max_span=3",
    ]);
    c.seed = seed;
    c
}

pub fn arg_ontology() -> FrameOntology {
    FrameOntology::new(
        BTreeMap::from([
            ("Motion".to_string(), strings(&["Theme", "Goal"])),
            (
                "Giving".to_string(),
                strings(&["Donor", "Theme", "Recipient"]),
            ),
        ]),
        BTreeMap::from([
            ("go.v".to_string(), strings(&["Motion"])),
            ("walk.v".to_string(), strings(&["Motion"])),
            ("give.v".to_string(), strings(&["Giving"])),
            ("hand.v".to_string(), strings(&["Giving", "Motion"])),
        ]),
    )
    .unwrap()
}

/// Five hand-written sentences.
pub fn overfit_arg_corpus() -> Vec<AnnotatedSentence> {
    parse_corpus(
        r#"{"id":"a","tokens":["the","dog","went","home"],"pos":["DT","NN","VBD","NN"],"annotations":[{"target":[2,2],"lu":"go.v","frame":"Motion","elements":[{"role":"Theme","span":[0,1]},{"role":"Goal","span":[3,3]}]}]}
{"id":"b","tokens":["she","gave","him","a","book"],"pos":["PRP","VBD","PRP","DT","NN"],"annotations":[{"target":[1,1],"lu":"give.v","frame":"Giving","elements":[{"role":"Donor","span":[0,0]},{"role":"Recipient","span":[2,2]},{"role":"Theme","span":[3,4]}]}]}
{"id":"c","tokens":["we","walked","to","the","park"],"pos":["PRP","VBD","TO","DT","NN"],"annotations":[{"target":[1,1],"lu":"walk.v","frame":"Motion","elements":[{"role":"Theme","span":[0,0]},{"role":"Goal","span":[2,4]}]}]}
{"id":"d","tokens":["he","handed","over","the","keys"],"pos":["PRP","VBD","RP","DT","NNS"],"annotations":[{"target":[1,1],"lu":"hand.v","frame":"Giving","elements":[{"role":"Donor","span":[0,0]},{"role":"Theme","span":[3,4]}]}]}
{"id":"e","tokens":["a","cat","quietly","went","out"],"pos":["DT","NN","RB","VBD","RP"],"annotations":[{"target":[3,3],"lu":"go.v","frame":"Motion","elements":[{"role":"Theme","span":[0,1]}]}]}"#,
        "overfit",
    )
    .unwrap()
}

pub fn frame_ontology() -> FrameOntology {
    FrameOntology::new(
        BTreeMap::from([
            ("Operating".to_string(), strings(&["Agent"])),
            ("Racing".to_string(), strings(&["Agent"])),
            ("Fluidic".to_string(), strings(&["Fluid"])),
        ]),
        BTreeMap::from([(
            "run.v".to_string(),
            strings(&["Fluidic", "Operating", "Racing"]),
        )]),
    )
    .unwrap()
}

/// Five targets of one LU with three candidate frames; the object decides.
pub fn overfit_frame_corpus() -> Vec<AnnotatedSentence> {
    let rows = [
        ("she runs the company", "Operating"),
        ("he runs a marathon", "Racing"),
        ("water runs downhill fast", "Fluidic"),
        ("they run the shop", "Operating"),
        ("we run the race", "Racing"),
    ];
    rows.iter()
        .enumerate()
        .map(|(k, (text, frame))| AnnotatedSentence {
            id: Some(format!("f{k}")),
            tokens: text.split(' ').map(String::from).collect(),
            pos: strings(&["PRP", "VBZ", "DT", "NN"]),
            annotations: vec![Annotation {
                target: Span::new(1, 1),
                lu: "run.v".into(),
                frame: frame.to_string(),
                elements: Vec::new(),
            }],
        })
        .collect()
}

/// `subject went object adverb`. The subject is always the Theme. The object
/// is the Goal for one noun class, and with probability `p_ambiguous` for
/// the other.
pub fn recall_corpus(size: usize, p_ambiguous: f64, seed: u64) -> Vec<AnnotatedSentence> {
    let subjects = ["she", "he", "they", "we"];
    let sure = ["home", "school", "town", "work"];
    let unsure = ["box", "rock", "cup", "pen", "door", "bag"];
    let tails = ["today", "slowly", "again", "quickly"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|k| {
            let is_sure = rng.gen_bool(0.5);
            let obj = if is_sure {
                *sure.choose(&mut rng).unwrap()
            } else {
                *unsure.choose(&mut rng).unwrap()
            };
            let tokens = strings(&[
                subjects.choose(&mut rng).unwrap(),
                "went",
                obj,
                tails.choose(&mut rng).unwrap(),
            ]);
            let mut elements = vec![Element {
                role: "Theme".into(),
                span: Span::new(0, 0),
            }];
            if is_sure || rng.gen_bool(p_ambiguous) {
                elements.push(Element {
                    role: "Goal".into(),
                    span: Span::new(2, 2),
                });
            }
            AnnotatedSentence {
                id: Some(format!("r{k}")),
                tokens,
                pos: strings(&["PRP", "VBD", "NN", "RB"]),
                annotations: vec![Annotation {
                    target: Span::new(1, 1),
                    lu: "go.v".into(),
                    frame: "Motion".into(),
                    elements,
                }],
            }
        })
        .collect()
}

pub fn trees() -> Vec<ScaffoldInstance> {
    segrnn::corpus::parse_treebank(
        "(S (NP (DT the) (NN dog)) (VP (VBD ran) (ADVP (RB away))))\n(S (NP (PRP she)) (VP (VBD saw) (NP (DT a) (NN cat))))\n",
        "trees",
        3,
    )
    .unwrap()
}
