//! Property tests against independent oracles.

use std::collections::{BTreeMap, BTreeSet};

use lamp_core::edit::{apply_edits, classify_lengths, EditOperation, EditSpan};
use lamp_core::preference::{average_ranks, Condition, PreferenceJudgment};
use lamp_core::spans::{precision, LabeledSpan};
use lamp_core::stats::{kendalls_w, pearson_r, wilcoxon_signed_rank};
use lamp_core::templates::{contrast_templates, extract_templates, TaggedParagraph, TaggedToken};
use lamp_core::{levenshtein, normalize_scores, EditCategory};
use proptest::prelude::*;

fn lev_oracle(a: &[char], b: &[char]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            if x == y {
                lev_oracle(ra, rb)
            } else {
                1 + lev_oracle(ra, b).min(lev_oracle(a, rb)).min(lev_oracle(ra, rb))
            }
        }
    }
}

fn small_string() -> impl Strategy<Value = String> {
    proptest::collection::vec(prop_oneof![Just('a'), Just('b'), Just('c'), Just('é'), Just('👍')], 0..=8)
        .prop_map(|v| v.into_iter().collect())
}

proptest! {
    #[test]
    fn levenshtein_matches_recursion(a in small_string(), b in small_string()) {
        let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        prop_assert_eq!(levenshtein(&a, &b), lev_oracle(&ca, &cb));
    }

    #[test]
    fn levenshtein_metric(a in small_string(), b in small_string(), c in small_string()) {
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        prop_assert_eq!(levenshtein(&a, &b) == 0, a == b);
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
    }

    #[test]
    fn classification_total(o in 0usize..300, r in 0usize..300) {
        let got = classify_lengths(o, r);
        prop_assert_eq!(got.is_none(), o == 0 && r == 0);
    }

    #[test]
    fn normalized_scores_ordered(raw in proptest::collection::vec(1u8..=10, 1..30)) {
        let mut m = BTreeMap::new();
        m.insert("w".to_string(), raw.clone());
        let out = normalize_scores(&m).unwrap().remove("w").unwrap();
        for (i, j) in (0..raw.len()).flat_map(|i| (0..raw.len()).map(move |j| (i, j))) {
            if raw[i] < raw[j] {
                prop_assert!(out[i] < out[j]);
            }
            if raw[i] == raw[j] {
                prop_assert!((out[i] - out[j]).abs() < 1e-12);
            }
        }
        prop_assert!(out.iter().all(|v| (1.0 - 1e-12..=10.0 + 1e-12).contains(v)));
    }

    #[test]
    fn pearson_affine(xs in proptest::collection::vec(-50i32..50, 3..20), a in 1i32..10, b in -10i32..10) {
        let x: Vec<f64> = xs.iter().map(|&v| f64::from(v)).collect();
        let y: Vec<f64> = xs.iter().enumerate().map(|(i, &v)| f64::from(v * v) + i as f64).collect();
        prop_assume!(pearson_r(&x, &y).is_ok());
        let r = pearson_r(&x, &y).unwrap();
        let scaled: Vec<f64> = y.iter().map(|v| f64::from(a) * v + f64::from(b)).collect();
        prop_assert!((pearson_r(&x, &scaled).unwrap() - r).abs() < 1e-9);
        let neg: Vec<f64> = y.iter().map(|v| -f64::from(a) * v).collect();
        prop_assert!((pearson_r(&x, &neg).unwrap() + r).abs() < 1e-9);
    }
}

/// Random non-overlapping edits over a random Unicode string.
fn text_and_edits() -> impl Strategy<Value = (String, Vec<(usize, usize, String, bool)>)> {
    let alphabet = prop_oneof![Just('a'), Just(' '), Just('ß'), Just('中'), Just('👍'), Just('\n')];
    proptest::collection::vec(alphabet, 0..40).prop_flat_map(|chars| {
        let n = chars.len();
        let text: String = chars.into_iter().collect();
        let cuts = proptest::collection::btree_set(0..=n, 0..10);
        let reps = proptest::collection::vec(("[xyé👍]{0,4}", any::<bool>(), any::<bool>()), 10);
        (Just(text), cuts, reps).prop_map(|(text, cuts, reps)| {
            let cuts: Vec<usize> = cuts.into_iter().collect();
            let mut edits = Vec::new();
            // consecutive cut pairs become spans; `zero` turns one into a
            // point insertion at its start
            for (k, w) in cuts.chunks(2).enumerate() {
                let (rep, zero, undone) = reps[k].clone();
                let (s, e) = if w.len() == 2 && !zero { (w[0], w[1]) } else { (w[0], w[0]) };
                if s == e && rep.is_empty() {
                    continue;
                }
                edits.push((s, e, rep, undone));
            }
            (text, edits)
        })
    })
}

/// Rebuilds the edited text one character position at a time.
fn reference_splice(text: &str, edits: &[(usize, usize, String, bool)]) -> String {
    let chars: Vec<char> = text.chars().collect();
    let live: Vec<&(usize, usize, String, bool)> = edits.iter().filter(|e| !e.3).collect();
    let mut out = String::new();
    let mut pos = 0;
    while pos <= chars.len() {
        for e in live.iter().filter(|e| e.0 == pos && e.1 == pos) {
            out.push_str(&e.2);
        }
        if let Some(e) = live.iter().find(|e| e.0 == pos && e.1 > pos) {
            out.push_str(&e.2);
            pos = e.1;
            continue;
        }
        if pos < chars.len() {
            out.push(chars[pos]);
        }
        pos += 1;
    }
    out
}

fn to_spans(text: &str, edits: &[(usize, usize, String, bool)]) -> Vec<EditSpan> {
    let chars: Vec<char> = text.chars().collect();
    edits
        .iter()
        .enumerate()
        .map(|(i, (s, e, r, u))| EditSpan {
            start: *s,
            end: *e,
            original: chars[*s..*e].iter().collect(),
            replacement: r.clone(),
            category: EditCategory::Cliche,
            annotator: "w".into(),
            order_index: i as u64,
            undone: *u,
        })
        // both-empty edits are invalid even when undone
        .filter(|e| !(e.original.is_empty() && e.replacement.is_empty()))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]
    #[test]
    fn apply_edits_matches_reference((text, edits) in text_and_edits()) {
        let spans = to_spans(&text, &edits);
        let kept: Vec<(usize, usize, String, bool)> = spans
            .iter()
            .map(|e| (e.start, e.end, e.replacement.clone(), e.undone))
            .collect();
        let got = apply_edits(&text, &spans).unwrap();
        prop_assert_eq!(got, reference_splice(&text, &kept));
    }
}

fn spearman(a: &[u32], b: &[u32]) -> f64 {
    let n = a.len() as f64;
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

#[test]
fn kendall_w_equals_mean_spearman_route() {
    // W = ((m - 1) * mean pairwise Spearman rho + 1) / m for untied ranks
    let perms: Vec<Vec<u32>> = vec![
        vec![1, 2, 3],
        vec![1, 3, 2],
        vec![2, 1, 3],
        vec![2, 3, 1],
        vec![3, 1, 2],
        vec![3, 2, 1],
    ];
    for a in &perms {
        for b in &perms {
            for c in &perms {
                let rows = vec![a.clone(), b.clone(), c.clone()];
                let rho = (spearman(a, b) + spearman(a, c) + spearman(b, c)) / 3.0;
                let oracle = (2.0 * rho + 1.0) / 3.0;
                assert!((kendalls_w(&rows).unwrap() - oracle).abs() < 1e-12);
            }
        }
    }
}

fn wilcoxon_enumeration(diffs: &[f64]) -> f64 {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nz.len();
    let mags: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    // average ranks by direct counting
    let ranks: Vec<f64> = mags
        .iter()
        .map(|m| {
            let below = mags.iter().filter(|x| *x < m).count() as f64;
            let equal = mags.iter().filter(|x| *x == m).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let plus: f64 = ranks.iter().zip(&nz).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let t = plus.min(total - plus);
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w <= t + 1e-9 {
            hits += 1;
        }
    }
    (2.0 * hits as f64 / (1u64 << n) as f64).min(1.0)
}

proptest! {
    #[test]
    fn wilcoxon_exact_matches_enumeration(diffs in proptest::collection::vec(-4i32..=4, 1..=10)) {
        let pairs: Vec<(f64, f64)> = diffs.iter().map(|&d| (f64::from(d), 0.0)).collect();
        prop_assume!(diffs.iter().any(|d| *d != 0));
        let got = wilcoxon_signed_rank(&pairs).unwrap();
        let oracle = wilcoxon_enumeration(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        prop_assert!((got.p_value - oracle).abs() < 1e-12, "{} vs {}", got.p_value, oracle);
    }
}

#[test]
fn wilcoxon_all_positive_closed_form() {
    for n in 1..=20u32 {
        let pairs: Vec<(f64, f64)> = (1..=n).map(|i| (f64::from(i) + 0.5, 0.0)).collect();
        let r = wilcoxon_signed_rank(&pairs).unwrap();
        assert_eq!(r.p_value, (2.0 / 2f64.powi(n as i32)).min(1.0), "n={n}");
    }
}

fn span_set(max: usize) -> impl Strategy<Value = Vec<LabeledSpan>> {
    proptest::collection::btree_set(0..max, 0..8).prop_flat_map(|cuts| {
        let cuts: Vec<usize> = cuts.into_iter().collect();
        let n = cuts.len() / 2;
        proptest::collection::vec(0usize..3, n).prop_map(move |cats| {
            cuts.chunks_exact(2)
                .zip(cats)
                .map(|(w, c)| LabeledSpan::new(w[0], w[1], EditCategory::NAMED[c].clone()))
                .collect()
        })
    })
}

proptest! {
    #[test]
    fn precision_properties(pred in span_set(60), gold in span_set(60), shift in 0usize..50) {
        let r = precision(&pred, &gold, 60).unwrap();
        prop_assert!(r.categorical <= r.general + 1e-12);
        prop_assert!((0.0..=1.0).contains(&r.general));
        let mv = |v: &[LabeledSpan]| -> Vec<LabeledSpan> {
            v.iter().map(|s| LabeledSpan::new(s.start + shift, s.end + shift, s.category.clone())).collect()
        };
        let shifted = precision(&mv(&pred), &mv(&gold), 60 + shift).unwrap();
        prop_assert_eq!(shifted, r);
    }

    #[test]
    fn shrinking_inside_gold_never_hurts(gold in span_set(60), extra in 1usize..10) {
        prop_assume!(!gold.is_empty());
        // a prediction that covers the first gold span plus some margin, then
        // shrinks to exactly that span
        let g = &gold[0];
        let lo = g.start.saturating_sub(extra);
        let hi = (g.end + extra).min(gold.get(1).map_or(60, |n| n.start));
        let lo = gold.iter().filter(|s| s.end <= g.start).map(|s| s.end).max().map_or(lo, |e| lo.max(e));
        let wide = precision(&[LabeledSpan::new(lo, hi, g.category.clone())], &gold, 60).unwrap();
        let tight = precision(&[g.clone()], &gold, 60).unwrap();
        prop_assert!(tight.general >= wide.general);
    }
}

fn tagged(tags: &[&str]) -> TaggedParagraph {
    TaggedParagraph {
        source_id: "p".into(),
        tokens: tags.iter().map(|t| TaggedToken { surface: t.to_lowercase(), tag: t.to_string() }).collect(),
    }
}

fn tag_seq() -> impl Strategy<Value = Vec<&'static str>> {
    proptest::collection::vec(prop_oneof![Just("DT"), Just("NN"), Just("IN"), Just("CC"), Just("JJ")], 0..20)
}

proptest! {
    #[test]
    fn template_totals(seq in tag_seq(), n in 5usize..=8) {
        let m = extract_templates(&[tagged(&seq)], &BTreeSet::from([n])).unwrap();
        let total: u64 = m.values().map(|s| s.count).sum();
        prop_assert_eq!(total as usize, (seq.len() + 1).saturating_sub(n));
        for (template, stats) in &m {
            for ex in &stats.examples {
                let retagged: Vec<String> = ex.iter().map(|s| s.to_uppercase()).collect();
                prop_assert_eq!(&retagged, template);
            }
        }
    }

    #[test]
    fn contrast_monotone_in_ratio(a in proptest::collection::vec(tag_seq(), 1..6),
                                  b in proptest::collection::vec(tag_seq(), 1..6),
                                  r1 in 0.0f64..2.0, r2 in 0.0f64..2.0) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let lens = BTreeSet::from([5]);
        let llm = extract_templates(&a.iter().map(|s| tagged(s)).collect::<Vec<_>>(), &lens).unwrap();
        let hum = extract_templates(&b.iter().map(|s| tagged(s)).collect::<Vec<_>>(), &lens).unwrap();
        let small: BTreeSet<_> = contrast_templates(&llm, &hum, 10, lo).unwrap().into_iter().map(|r| r.template).collect();
        let big: BTreeSet<_> = contrast_templates(&llm, &hum, 10, hi).unwrap().into_iter().map(|r| r.template).collect();
        prop_assert!(small.is_subset(&big));
        let top: BTreeSet<_> = lamp_core::templates::top_templates(&llm, 10).into_iter().map(|(t, _)| t.clone()).collect();
        prop_assert!(big.is_subset(&top));
    }

    #[test]
    fn average_ranks_weighted_mean_is_two(perms in proptest::collection::vec(0usize..6, 1..40)) {
        use Condition::*;
        const P: [[u8; 3]; 6] = [[1, 2, 3], [1, 3, 2], [2, 1, 3], [2, 3, 1], [3, 1, 2], [3, 2, 1]];
        let js: Vec<PreferenceJudgment> = perms
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let conds = [LLMGenerated, WriterEdited, if i % 2 == 0 { LLMEditedFull } else { LLMEditedOracle }];
                PreferenceJudgment {
                    triplet_id: format!("t{i}"),
                    judge: "j".into(),
                    condition_of_rank: conds.iter().zip(P[p]).map(|(c, r)| (r, *c)).collect(),
                    display_order: conds.to_vec(),
                }
            })
            .collect();
        let means = average_ranks(&js);
        let mut weighted = 0.0;
        let mut count = 0.0;
        for (c, m) in &means {
            prop_assert!((1.0..=3.0).contains(m));
            let k = js.iter().filter(|j| j.rank_of(*c).is_some()).count() as f64;
            weighted += m * k;
            count += k;
        }
        prop_assert!((weighted / count - 2.0).abs() < 1e-12);
    }
}

#[test]
fn rule_table_boundaries() {
    assert_eq!(classify_lengths(0, 1), Some(EditOperation::Insertion));
    assert_eq!(classify_lengths(1, 0), Some(EditOperation::Deletion));
    assert_eq!(classify_lengths(1, 40), Some(EditOperation::Replacement));
    assert_eq!(classify_lengths(1, 41), Some(EditOperation::Insertion));
    assert_eq!(classify_lengths(41, 1), Some(EditOperation::Deletion));
    assert_eq!(classify_lengths(40, 1), Some(EditOperation::Replacement));
}
