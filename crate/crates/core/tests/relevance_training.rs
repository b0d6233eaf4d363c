use factgraph::eval::top1_rate;
use factgraph::fixture::planted_corpus;
use factgraph::generation::GeneratorScorer;
use factgraph::relevance::{train, LikelihoodScorer, RelevanceModel, TrainConfig};

#[test]
fn planted_signal_is_learned() {
    let start = std::time::Instant::now();
    let (turns, mock) = planted_corpus(42, 200, 10);
    let (train_set, held_out) = turns.split_at(160);
    let scorer = GeneratorScorer { generator: &mock, max_chars: 4000 };
    let report = train(RelevanceModel::random(16, 1), train_set, &scorer, &TrainConfig::default()).unwrap();
    let gold = |t: &_, c: &_| scorer.likelihood(t, c).unwrap() > 0.5;
    let rate = top1_rate(&report.model, held_out, &gold);
    println!("held-out top-1 {rate}, losses {:?}, {:?}", report.epoch_loss, start.elapsed());
    assert!(rate >= 0.95, "{rate}");
    assert!(report.epoch_loss.last().unwrap() < report.epoch_loss.first().unwrap());
}
