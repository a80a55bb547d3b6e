use medtem::corpus::Relation;
use medtem::relex::{
    accuracy, classify_relation, fixture_config, rel_vocab_from_docs, separable_documents, separable_instances, train_rel, RelModel,
};

#[test]
fn separable_fixture_train_and_held_out() {
    let train_docs = separable_documents(20, 1);
    let test_docs = separable_documents(10, 2);
    let all: Vec<_> = train_docs.iter().chain(&test_docs).cloned().collect();
    let vocab = rel_vocab_from_docs(&all);
    let train = separable_instances(&train_docs, &vocab);
    let test = separable_instances(&test_docs, &vocab);
    assert_eq!(train.len(), 60);

    let config = fixture_config(3);
    let (model, hist) = train_rel(&config, vocab.clone(), &train, &[]).unwrap();
    let train_acc = accuracy(&model, &train).unwrap();
    let test_acc = accuracy(&model, &test).unwrap();
    assert!(train_acc >= 0.98, "train accuracy {train_acc}");
    assert!(test_acc >= 0.90, "held-out accuracy {test_acc}");
    let first = hist[0].train_loss;
    let last = hist.last().unwrap().train_loss;
    assert!(last <= 0.5 * first, "loss {first} -> {last}");

    let (again, _) = train_rel(&config, vocab, &train, &[]).unwrap();
    assert_eq!(again.to_checkpoint(), model.to_checkpoint());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rel.ckpt");
    model.save(&path).unwrap();
    let loaded = RelModel::load(&path).unwrap();
    for i in &test {
        assert_eq!(classify_relation(&loaded, i).unwrap(), classify_relation(&model, i).unwrap());
    }
}

#[test]
fn swapped_labels_swap_predictions() {
    let docs = separable_documents(20, 5);
    let vocab = rel_vocab_from_docs(&docs);
    let swap = |r: Relation| match r {
        Relation::After => Relation::Before,
        Relation::Before => Relation::After,
        Relation::Overlap => Relation::Overlap,
    };
    let mut train = separable_instances(&docs, &vocab);
    for i in &mut train {
        i.label = i.label.map(swap);
    }
    let (model, _) = train_rel(&fixture_config(4), vocab, &train, &[]).unwrap();
    assert!(accuracy(&model, &train).unwrap() >= 0.98);
}
