//! Generators for fuzzed structured outputs and reward groups, and the
//! partition invariants they are checked against.

use grca::credit::{
    route_advantages, score_output, standardize_group, AdvantageMode, CreditConfig, FieldRewards, GroundTruth,
    GroupMember, GroupRollout,
};
use grca::geometry::{Box2D, Box3D, QuantRanges};
use grca::schema::{parse_text, FieldStatus, GeomField};
use grca::spans::{char_to_token_spans, reference_tokenizer, TokenOwner, TokenSpanPartition, TokenizerMode};
use proptest::prelude::*;

#[derive(Debug, Clone)]
pub enum Variant {
    Ok(String),
    Missing,
    Duplicated(String, String),
    Malformed(String),
}

impl Variant {
    pub fn expected(&self) -> FieldStatus {
        match self {
            Variant::Ok(_) => FieldStatus::Ok,
            Variant::Missing => FieldStatus::Missing,
            Variant::Duplicated(..) => FieldStatus::Duplicated,
            Variant::Malformed(_) => FieldStatus::Malformed,
        }
    }
}

fn bins(n: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(0u32..1300, n)
        .prop_map(|v| format!("[{}]", v.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(", ")))
}

fn bin_rows(n: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(bins(n), 1..5).prop_map(|rows| format!("[{}]", rows.join(", ")))
}

fn good_value(f: GeomField) -> BoxedStrategy<String> {
    match f {
        GeomField::Bbox2d => bins(4).boxed(),
        GeomField::Bbox3d => bins(6).boxed(),
        GeomField::Kpts2d => bin_rows(2).boxed(),
        GeomField::Kpts3d => bin_rows(3).boxed(),
    }
}

fn bad_value(f: GeomField) -> BoxedStrategy<String> {
    let wrong_arity = match f {
        GeomField::Bbox2d => bins(3).boxed(),
        GeomField::Bbox3d => bins(5).boxed(),
        GeomField::Kpts2d => bin_rows(3).boxed(),
        GeomField::Kpts3d => bin_rows(2).boxed(),
    };
    prop_oneof![
        wrong_arity,
        Just("[]".to_string()),
        Just("null".to_string()),
        Just("\"12, 40\"".to_string()),
        Just("[1.5, 2, 3, 4, 5, 6]".to_string()),
        Just("[-1, 2, 3, 4, 5, 6]".to_string()),
        Just("{\"x\": 1}".to_string()),
        Just("[[1, 2], [3]]".to_string()),
    ]
    .boxed()
}

fn variant(f: GeomField) -> impl Strategy<Value = Variant> {
    prop_oneof![
        6 => good_value(f).prop_map(Variant::Ok),
        1 => Just(Variant::Missing),
        1 => (good_value(f), good_value(f)).prop_map(|(a, b)| Variant::Duplicated(a, b)),
        2 => bad_value(f).prop_map(Variant::Malformed),
    ]
}

#[derive(Debug, Clone)]
pub struct Output {
    pub text: String,
    pub variants: Vec<Variant>,
    /// Whether the text was cut short, which can invalidate the expectation.
    pub truncated: bool,
}

pub fn output() -> impl Strategy<Value = Output> {
    let fields = GeomField::ALL.map(variant);
    (
        fields,
        Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
        prop::sample::select(vec!["", "Sure! ", "résumé → ", "```json\n"]),
        prop::sample::select(vec!["", " done", " ✓ 42", "\n```"]),
        prop::sample::select(vec![" ", "", "\n  "]),
        "[a-z é]{0,12}",
        prop::option::weighted(0.1, 0.0..1.0f64),
    )
        .prop_map(|(variants, order, prefix, suffix, ws, description, cut)| {
            let mut entries: Vec<Vec<String>> =
                vec![vec![format!("\"answer\":{ws}\"cup\"")], vec![format!("\"description\":{ws}\"{description}\"")]];
            for (f, v) in GeomField::ALL.iter().zip(&variants) {
                let key = format!("\"{}\":{ws}", f.name());
                entries.push(match v {
                    Variant::Ok(s) | Variant::Malformed(s) => vec![format!("{key}{s}")],
                    Variant::Missing => vec![],
                    Variant::Duplicated(a, b) => vec![format!("{key}{a}"), format!("{key}{b}")],
                });
            }
            let body: Vec<String> = order.iter().flat_map(|&i| entries[i].clone()).collect();
            let mut text = format!("{prefix}{{{}}}{suffix}", body.join(&format!(",{ws}")));
            let truncated = cut.is_some();
            if let Some(c) = cut {
                let n = text.chars().count();
                text = text.chars().take((c * n as f64) as usize).collect();
            }
            Output { text, variants: variants.to_vec(), truncated }
        })
}

pub fn gt() -> GroundTruth {
    GroundTruth {
        bbox2d: Box2D::new(100.0, 100.0, 400.0, 300.0).unwrap(),
        bbox3d: Box3D::new([-0.5, -0.4, -0.3], [0.6, 0.5, 0.4]).unwrap(),
    }
}

/// Every token has one owner; a field's tokens are exactly those that
/// overlap its span and no earlier span; background tokens overlap nothing.
pub fn check_partition(text: &str, mode: TokenizerMode) -> Result<(), TestCaseError> {
    let parsed = parse_text(text);
    let view = reference_tokenizer(text, mode);
    prop_assert_eq!(view.text(), text);
    let part = char_to_token_spans(&view, &parsed).unwrap();
    prop_assert_eq!(part.len(), view.len());

    let spans: Vec<(GeomField, (usize, usize))> =
        GeomField::ALL.iter().filter_map(|&f| parsed.span(f).map(|s| (f, (s.start, s.end)))).collect();
    for (a, sa) in &spans {
        for (b, sb) in &spans {
            if a != b {
                prop_assert!(sa.1 <= sb.0 || sb.1 <= sa.0, "{a:?} and {b:?} spans overlap");
            }
        }
    }
    let mut covered = 0;
    for f in GeomField::ALL {
        covered += part.field_tokens(f).len();
    }
    covered += part.background().len();
    prop_assert_eq!(covered, view.len());

    for t in 0..view.len() {
        let (s, e) = view.char_range(t);
        let hit: Vec<GeomField> = {
            let mut h: Vec<_> = spans.iter().filter(|(_, sp)| s < sp.1 && sp.0 < e).collect();
            h.sort_by_key(|(_, sp)| sp.0);
            h.into_iter().map(|(f, _)| *f).collect()
        };
        let want = hit.first().map(|f| TokenOwner::Field(*f)).unwrap_or(TokenOwner::Background);
        prop_assert_eq!(part.owner(t), want, "token {} {:?}", t, &view.pieces()[t]);
    }

    let scoring = score_output(&parsed, &gt(), &QuantRanges::default(), None);
    for f in GeomField::ALL {
        if parsed.status(f) != FieldStatus::Ok {
            prop_assert!(parsed.span(f).is_none());
            prop_assert!(part.field_tokens(f).is_empty());
            prop_assert_eq!(scoring.rewards.get(f), 0.0);
        } else {
            let sp = parsed.span(f).unwrap();
            prop_assert!(!sp.is_empty());
        }
        prop_assert!((0.0..=1.0).contains(&scoring.rewards.get(f)));
    }
    Ok(())
}

fn member(owners: Vec<TokenOwner>, fields: [f64; 4], rpc: f64) -> GroupMember {
    GroupMember { partition: TokenSpanPartition::from_owners(owners), rewards: FieldRewards { fields, rpc } }
}

fn owner_strategy() -> impl Strategy<Value = TokenOwner> {
    prop_oneof![Just(TokenOwner::Background), prop::sample::select(GeomField::ALL.to_vec()).prop_map(TokenOwner::Field),]
}

pub fn group_strategy() -> impl Strategy<Value = GroupRollout> {
    prop::collection::vec(
        (prop::collection::vec(owner_strategy(), 0..40), prop::array::uniform4(0.0..=1.0f64), 0.0..=1.0f64),
        2..10,
    )
    .prop_map(|ms| GroupRollout {
        input_id: "g".into(),
        members: ms.into_iter().map(|(o, f, r)| member(o, f, r)).collect(),
    })
}

/// Largest gap between routed token advantages and a direct recomputation:
/// field tokens take their field's standardized reward, background tokens
/// the lambda mix of the mean field advantage and the RPC advantage.
pub fn routing_error(group: &GroupRollout, lambda: f64) -> f64 {
    let cfg = CreditConfig { lambda, std_eps: 1e-4 };
    let out = route_advantages(group, &cfg, AdvantageMode::Routed).unwrap();
    let column = |k: usize| -> Vec<f64> {
        let v: Vec<f64> =
            group.members.iter().map(|m| if k < 4 { m.rewards.fields[k] } else { m.rewards.rpc }).collect();
        standardize_group(&v, 1e-4)
    };
    let adv: Vec<Vec<f64>> = (0..5).map(column).collect();
    let mut worst = 0.0f64;
    for (i, m) in group.members.iter().enumerate() {
        let bg = (1.0 - lambda) * (0..4).map(|k| adv[k][i]).sum::<f64>() / 4.0 + lambda * adv[4][i];
        for (t, o) in m.partition.owners().iter().enumerate() {
            let want = match o {
                TokenOwner::Field(f) => adv[f.index()][i],
                TokenOwner::Background => bg,
            };
            worst = worst.max((out.tokens[i][t] - want).abs());
        }
    }
    worst
}

/// With every field reward of a member set equal and lambda 0, routed and
/// broadcast token advantages should coincide; returns the largest gap.
pub fn equal_field_gap(group: &GroupRollout) -> f64 {
    let mut group = group.clone();
    for m in &mut group.members {
        m.rewards.fields = [m.rewards.fields[0]; 4];
    }
    let cfg = CreditConfig { lambda: 0.0, std_eps: 1e-4 };
    let routed = route_advantages(&group, &cfg, AdvantageMode::Routed).unwrap();
    let broad = route_advantages(&group, &cfg, AdvantageMode::Broadcast).unwrap();
    routed.tokens.iter().flatten().zip(broad.tokens.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
