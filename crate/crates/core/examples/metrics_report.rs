//! Every metric on a tiny hand-made example, small enough to check by eye.
//!
//! cargo run --example metrics_report

use posit::dataset::InteractionMatrix;
use posit::metrics::{
    coverage_at_k, evaluate, gini, item_recall_at_k, ndcg_at_k, recall_at_k, EvalOptions, RankedLists,
};

fn main() -> posit::Result<()> {
    // four users, six items; lists already exclude each user's fold-in items
    let ranked = RankedLists::new(
        vec![vec![0, 1, 2], vec![0, 3, 1], vec![0, 1, 4], vec![5, 0, 1]],
        3,
    );
    let heldout = InteractionMatrix::from_rows(vec![vec![1], vec![3, 5], vec![2], vec![5]], 6)?;
    let train_freq = [40, 30, 10, 5, 3, 2];

    for k in [1, 2, 3] {
        println!(
            "k={k}: recall {:.4}  ndcg {:.4}  item recall {:.4}  coverage (pairs of users) {:.1}",
            recall_at_k(&ranked, &heldout, k),
            ndcg_at_k(&ranked, &heldout, k),
            item_recall_at_k(&ranked, &heldout, k),
            coverage_at_k(&ranked, k, 2)?.mean,
        );
    }
    let counts: Vec<f64> = train_freq.iter().map(|&f| f as f64).collect();
    println!("Gini of training popularity: {:.4}", gini(&counts)?);

    let opts = EvalOptions {
        ks: vec![1, 3],
        coverage_batch_sizes: vec![2, 4],
        gini_k: 3,
    };
    let report = evaluate(&ranked, &heldout, &train_freq, &opts)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}
