use std::collections::BTreeMap;

use behavehmm::classify::{compare_feature_families, CvConfig, FeatureFamily, TraitTarget};
use behavehmm::features::{aggregate_counts, aggregate_feature_table, binarize, state_feature_table, state_frequencies};
use behavehmm::hmm::{fit, viterbi, TrainConfig};
use behavehmm::ingest::{encode, filter_rare_actions, parse_log, LogFormat, RateMode};
use behavehmm::io::{self, RecordsFile, Traits};
use behavehmm::stats::state_frequency_anova;
use behavehmm::synth::{generate, order_sensitive_pair};
use behavehmm::{ActionAlphabet, Error, HmmModel, PlayerRecord, StatePath};

/// Second printed example sequence with its split codes ("S Q", "I N", "C Q", "D R") joined.
const SECOND_SEQUENCE: &str = "SQ D D IN A I I IN A A A A A A A CQ A A A I I IN D D DR IN D D D SQ D D D D D D D D D I I I I";

#[test]
fn printed_prefix_parses_token_by_token() {
    let recs = parse_log("p1\tSQ D D D CQ\n".as_bytes(), LogFormat::Tsv).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].tokens, ["SQ", "D", "D", "D", "CQ"]);
    assert!(parse_log("".as_bytes(), LogFormat::Jsonl).unwrap().is_empty());
}

#[test]
fn malformed_line_reports_its_number() {
    let input = "{\"player_id\":\"a\",\"actions\":[\"SQ\"]}\n{\"player_id\":\"b\",\"actions\":\n";
    match parse_log(input.as_bytes(), LogFormat::Jsonl) {
        Err(Error::MalformedLine { line, content, .. }) => {
            assert_eq!(line, 2);
            assert!(content.contains("\"b\""));
        }
        other => panic!("expected a malformed-line error, got {other:?}"),
    }
}

#[test]
fn sixty_six_player_threshold_boundary() {
    // 6/66 ≈ 0.0909 is below 10%, 7/66 ≈ 0.1061 is above.
    let records: Vec<PlayerRecord> = (0..66)
        .map(|i| {
            let mut t = vec!["D"];
            if i < 6 {
                t.push("K");
            }
            if i < 7 {
                t.push("L");
            }
            PlayerRecord::new(format!("p{i}"), t)
        })
        .collect();
    let out = filter_rare_actions(&records, 0.10, RateMode::Players).unwrap();
    assert!(out.alphabet.contains("L"));
    assert!(!out.alphabet.contains("K"));
    let k = out.report.iter().find(|r| r.code == "K").unwrap();
    assert!(!k.kept && (k.rate - 6.0 / 66.0).abs() < 1e-15);
    assert_eq!(out.records[0].tokens, ["D", "L"]);

    let all = filter_rare_actions(&records, 0.0, RateMode::Players).unwrap();
    assert_eq!(all.records, records);
}

#[test]
fn printed_frequency_rows_account_for_their_state_counts() {
    for (counts, total) in [([19usize, 4, 19, 14, 0], 56usize), ([7, 6, 17, 0, 13], 43)] {
        let states: Vec<usize> = counts.iter().enumerate().flat_map(|(s, &c)| std::iter::repeat_n(s, c)).collect();
        let path = StatePath::new("p", states, 5).unwrap();
        let raw = state_frequencies::<f64>(&path, 5, false).unwrap();
        assert_eq!(raw, counts.map(|c| c as f64));
        assert_eq!(raw.iter().sum::<f64>(), total as f64);
        let norm = state_frequencies::<f64>(&path, 5, true).unwrap();
        assert!((norm.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn second_printed_sequence_has_two_quest_starts() {
    let alphabet = ActionAlphabet::game_default();
    let record = PlayerRecord::new("seq2", SECOND_SEQUENCE.split(' '));
    let counts = aggregate_counts::<f64>(&record, &alphabet, false).unwrap();
    assert_eq!(counts[alphabet.index_of("SQ").unwrap()], 2.0);
    assert_eq!(counts.iter().sum::<f64>(), record.tokens.len() as f64);

    // Any decoding under any 5-state model accounts for every token.
    let seq = &encode(std::slice::from_ref(&record), &alphabet).unwrap()[0];
    let model = HmmModel::<f64>::uniform(5, alphabet.clone()).unwrap();
    let path = viterbi(&model, seq).unwrap();
    assert_eq!(path.frequencies.iter().sum::<usize>(), record.tokens.len());

    let bad = PlayerRecord::new("x", ["D", "ZZ"]);
    assert!(matches!(aggregate_counts::<f64>(&bad, &alphabet, false), Err(Error::UnknownToken { .. })));
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = generate(&order_sensitive_pair(4).unwrap(), 4).unwrap();

    let log = dir.path().join("logs.jsonl");
    io::write_log(&log, &out.records).unwrap();
    let back = io::read_log(&log, LogFormat::Jsonl).unwrap();
    assert_eq!(back.len(), out.records.len());
    assert!(back.iter().zip(&out.records).all(|(a, b)| a.player_id == b.player_id && a.tokens == b.tokens));

    let traits = Traits::from_records(&out.records);
    let tpath = dir.path().join("traits.csv");
    io::write_traits(&tpath, &traits).unwrap();
    assert_eq!(io::read_traits(&tpath).unwrap(), traits);

    let rec = RecordsFile { alphabet: out.manifest.alphabet.clone(), records: back };
    let rpath = dir.path().join("records.json");
    io::write_records(&rpath, &rec).unwrap();
    assert_eq!(io::read_records(&rpath).unwrap(), rec);

    let model = order_sensitive_pair(4).unwrap()[0].model.clone();
    let mpath = dir.path().join("model.json");
    io::write_json(&mpath, &model).unwrap();
    let loaded: HmmModel<f64> = io::read_json(&mpath).unwrap();
    assert_eq!(loaded, model, "model files keep every bit");

    let seqs = encode(&rec.records, model.alphabet()).unwrap();
    let paths: Vec<StatePath> = seqs.iter().map(|s| viterbi(&model, s).unwrap()).collect();
    let ppath = dir.path().join("paths.jsonl");
    io::write_paths(&ppath, &paths).unwrap();
    assert_eq!(io::read_paths(&ppath).unwrap(), paths);
}

#[test]
fn order_only_personas_separate_through_state_features() {
    let specs = order_sensitive_pair(21).unwrap();
    let out = generate(&specs, 21).unwrap();
    let filtered = filter_rare_actions(&out.records, 0.10, RateMode::Players).unwrap();
    let seqs = encode(&filtered.records, &filtered.alphabet).unwrap();
    let cfg = TrainConfig { restarts: 4, seed: 21, ..Default::default() };
    let fitted = fit::<f64>(&seqs, &filtered.alphabet, 4, &cfg).unwrap();
    let paths: Vec<StatePath> = seqs.iter().map(|s| viterbi(&fitted.model, s).unwrap()).collect();

    let hmm = state_feature_table::<f64>(&paths, 4, true).unwrap();
    let aggregate = aggregate_feature_table::<f64>(&filtered.records, &filtered.alphabet, true).unwrap();
    assert_eq!(hmm.ids(), aggregate.ids());

    let scores: BTreeMap<String, f64> = out.records.iter().map(|r| (r.player_id.clone(), r.traits["expertise"])).collect();
    let (labels, rule) = binarize("expertise", &scores).unwrap();
    let truth_high = |id: &str| id.starts_with("steady");
    assert!(labels.iter().all(|(id, &l)| (l == 1) == truth_high(id)), "mean split {} should recover personas", rule.mean);

    let targets = BTreeMap::from([("expertise".to_string(), TraitTarget::Scores(scores.clone()))]);
    let reports = compare_feature_families(&hmm, &aggregate, &targets, &CvConfig { seed: 3, ..Default::default() }).unwrap();
    assert_eq!(reports.len(), 1);
    let r = &reports[0];
    assert_eq!(r.hmm.family, FeatureFamily::Hmm);
    assert_eq!(r.aggregate.family, FeatureFamily::Aggregate);
    assert!(r.hmm.mean_accuracy >= 0.9, "hmm features {}", r.hmm.mean_accuracy);
    assert!(r.aggregate.mean_accuracy <= 0.75, "aggregate features {}", r.aggregate.mean_accuracy);
    assert!(r.hmm.fold_accuracies.len() == 3 && r.hmm.n == out.records.len());

    let rows = state_frequency_anova(&paths, &scores, 15, true).unwrap();
    assert_eq!(rows.len(), 4);
    let strongest = rows.iter().filter_map(|r| r.result.as_ref()).map(|a| a.p_value).fold(1.0, f64::min);
    assert!(strongest < 1e-3, "smallest p-value {strongest}");
}
