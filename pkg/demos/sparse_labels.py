"""One training epoch on a sparsely labeled synthetic stream.

With labels on only ~2% of batches, the default strategy updates the model
rarely. History-based pseudo-targets fill the gaps and reach a better test
NDCG@10 after the same single pass.

    python demos/sparse_labels.py
"""

from halstream.experiments import DataSource, ExperimentSpec, RunJob, execute
from halstream.model import TrainConfig
from halstream.pseudo import Strategy
from halstream.stream import SyntheticSpec, compute_label_density, make_batches


def main():
    spec = ExperimentSpec(data=DataSource(SyntheticSpec()), train=TrainConfig(), seeds=(0,))
    train = spec.data.splits(0)[0]
    density = compute_label_density(make_batches(train, spec.train.batch_edges))
    print(f"labeled-batch density: {density:.3f}")
    for strategy in ("default", "ha", "ma", "pf"):
        r = execute(RunJob(spec, Strategy(strategy), 0, max_epochs=1))
        print(f"{strategy:>8}: test NDCG@10 {r.test_ndcg:.4f}  gradient steps {r.total_steps}")


if __name__ == "__main__":
    main()
