use medtem::corpus::AnnotatedDocument;
use medtem::ner::{
    build_bilstm_crf, build_cnn_bilstm, build_vocabs, fixture_config, predict_tags, separable_fixture, token_accuracy, train_ner,
    Architecture, NerModel,
};

fn fit(arch: Architecture, seed: u64) -> (NerModel, medtem::ner::TrainingHistory) {
    let (scheme, data) = separable_fixture(50, 11);
    let (vocab, chars) = build_vocabs(&data, false);
    let config = fixture_config(arch, seed);
    let model = match arch {
        Architecture::BilstmCrf => build_bilstm_crf(&config, vocab, scheme, None).unwrap(),
        Architecture::CnnBilstm => build_cnn_bilstm(&config, vocab, chars, scheme, None).unwrap(),
    };
    train_ner(model, &data, &[], None).unwrap()
}

fn check(arch: Architecture) {
    let (_, data) = separable_fixture(50, 11);
    let (model, hist) = fit(arch, 5);
    let acc = token_accuracy(&model, &data).unwrap();
    assert!(acc >= 0.99, "{arch} accuracy {acc}");
    assert!(hist.epochs.len() <= 30);
    let first = hist.epochs[0].train_loss;
    let last = hist.epochs.last().unwrap().train_loss;
    assert!(last < first, "{arch} loss {first} -> {last}");
    for w in hist.epochs.windows(2) {
        assert!(
            w[1].train_loss <= w[0].train_loss * 1.10 + 1e-3,
            "{arch} loss rose {} -> {}",
            w[0].train_loss,
            w[1].train_loss
        );
    }
    for s in &data {
        assert_eq!(model.predict_sentence(&s.tokens).unwrap(), s.labels);
    }
    let (again, _) = fit(arch, 5);
    assert_eq!(again.to_checkpoint(), model.to_checkpoint());
}

#[test]
fn bilstm_crf_overfits_separable_fixture() {
    check(Architecture::BilstmCrf);
}

#[test]
fn cnn_bilstm_overfits_separable_fixture() {
    check(Architecture::CnnBilstm);
}

#[test]
fn viterbi_path_scores_at_least_gold() {
    let (_, data) = separable_fixture(10, 3);
    let (model, _) = fit(Architecture::BilstmCrf, 1);
    let tr = model.transitions().unwrap();
    for s in &data {
        let em = model.emissions(&s.tokens).unwrap();
        let (path, best) = medtem::crf::viterbi(&em, tr).unwrap();
        let gold: Vec<usize> = model.scheme.encode(&s.labels).unwrap().iter().map(|i| i - 1).collect();
        let gold_score = medtem::crf::score_sequence(&em, tr, &gold).unwrap();
        assert!(best >= gold_score - 1e-9);
        assert_eq!(path.len(), s.tokens.len());
    }
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let (model, _) = fit(Architecture::CnnBilstm, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ner.ckpt");
    model.save(&path).unwrap();
    let loaded = NerModel::load(&path).unwrap();
    let doc = AnnotatedDocument::from_text("d", "The patient was given aspirin 10 mg daily. Then heparin forte.");
    let a = predict_tags(&model, &doc).unwrap();
    assert_eq!(a, predict_tags(&loaded, &doc).unwrap());
    let counts: Vec<usize> = doc.sentence_token_ranges().iter().map(|r| r.len()).collect();
    assert_eq!(a.iter().map(Vec::len).collect::<Vec<_>>(), counts);
}
