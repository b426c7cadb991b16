import numpy as np
import pytest

from utils.errors import DimensionMismatchError, InvalidArgumentError
from utils.schemas import ClassifyReport, DesignMatrix
from utils.src_classifier import (
    CLASSIFIER_SOLVERS,
    ClassifierConfig,
    LabeledDictionary,
    SparseRepresentationClassifier,
    classify,
    downsample,
    evaluate,
    split_train_test,
    synthetic_subspace_dataset,
)


@pytest.fixture
def orthogonal_dictionary():
    # class "a" spans e0, e1 and class "b" spans e2, e3
    X = np.eye(6)[:, :4]
    return LabeledDictionary.from_columns(X, ["a", "a", "b", "b"])


@pytest.fixture(scope="module")
def subspace_data():
    return synthetic_subspace_dataset(n_classes=4, dim=60, subspace_dim=3, n_train=15, n_test=10, seed=3)


class TestLabeledDictionary:
    def test_classes_sorted(self, orthogonal_dictionary):
        assert orthogonal_dictionary.classes == ["a", "b"]
        assert orthogonal_dictionary.class_index["b"].tolist() == [2, 3]

    def test_single_class_rejected(self):
        with pytest.raises(InvalidArgumentError):
            LabeledDictionary.from_columns(np.eye(3), [1, 1, 1])

    def test_label_count_checked(self):
        with pytest.raises(DimensionMismatchError):
            LabeledDictionary.from_columns(np.eye(3), [1, 2])

    def test_columns_normalized(self):
        d = LabeledDictionary.from_columns(3.0 * np.eye(3), [0, 1, 1])
        np.testing.assert_allclose(d.A.col_norms, np.ones(3))


class TestDataHelpers:
    def test_downsample_grid(self):
        images = np.arange(24, dtype=float).reshape(4, 6).reshape(-1, 1)
        out = downsample(images, (4, 6), 0.5)
        assert out.shape == (6, 1)
        assert out[:, 0].tolist() == [0.0, 2.0, 4.0, 12.0, 14.0, 16.0]

    def test_downsample_fractional_rate(self):
        out = downsample(np.ones((36, 2)), (6, 6), 1 / 3)
        assert out.shape == (4, 2)

    def test_downsample_rejects_bad_input(self):
        with pytest.raises(DimensionMismatchError):
            downsample(np.ones((10, 1)), (4, 6), 0.5)
        with pytest.raises(InvalidArgumentError):
            downsample(np.ones((24, 1)), (4, 6), 1.5)

    def test_split_is_per_class(self):
        X = np.arange(20, dtype=float).reshape(1, 20)
        labels = np.repeat([0, 1], 10)
        Xtr, ytr, Xte, yte = split_train_test(X, labels, 0.7, seed=1)
        assert (ytr == 0).sum() == 7 and (ytr == 1).sum() == 7
        assert (yte == 0).sum() == 3 and (yte == 1).sum() == 3
        assert sorted(Xtr[0].tolist() + Xte[0].tolist()) == list(range(20))

    def test_synthetic_shapes_and_duplicates(self):
        Xtr, ytr, Xte, yte = synthetic_subspace_dataset(
            n_classes=3, dim=30, subspace_dim=2, n_train=10, n_test=4, duplicate_frac=0.3, seed=0
        )
        assert Xtr.shape == (30, 30) and Xte.shape == (30, 12)
        assert np.bincount(ytr).tolist() == [10, 10, 10]
        gram = np.corrcoef(Xtr[:, :10].T)
        np.fill_diagonal(gram, 0.0)
        assert np.max(np.abs(gram)) > 1 - 1e-6


class TestClassifier:
    @pytest.mark.parametrize("solver", CLASSIFIER_SOLVERS)
    def test_orthogonal_classes(self, orthogonal_dictionary, solver):
        label, coef = classify(orthogonal_dictionary, np.array([0.0, 0.0, 1.0, 0.5, 0.0, 0.0]), solver)
        assert label == "b"
        assert coef.shape == (4,)

    @pytest.mark.parametrize("solver", ["bgmp", "bomp", "l2"])
    def test_training_column_maps_to_its_class(self, subspace_data, solver):
        Xtr, ytr, _, _ = subspace_data
        d = LabeledDictionary.from_columns(Xtr, ytr)
        model = SparseRepresentationClassifier(d, solver).fit()
        for j in (0, 20, 47):
            label, _ = model.classify(d.A.data[:, j])
            assert label == ytr[j]

    def test_label_permutation_equivariance(self, subspace_data):
        Xtr, ytr, Xte, yte = subspace_data
        mapping = {0: 2, 1: 3, 2: 0, 3: 1}
        _, plain = SparseRepresentationClassifier(LabeledDictionary.from_columns(Xtr, ytr), "l2").evaluate(Xte, yte)
        permuted_labels = np.array([mapping[c] for c in ytr])
        permuted_test = np.array([mapping[c] for c in yte])
        _, permuted = SparseRepresentationClassifier(
            LabeledDictionary.from_columns(Xtr, permuted_labels), "l2"
        ).evaluate(Xte, permuted_test)
        assert [mapping[c] for c in plain["predicted_class"]] == permuted["predicted_class"].tolist()

    @pytest.mark.parametrize("solver", ["l2", "bgmp"])
    def test_column_permutation_invariance(self, subspace_data, solver):
        Xtr, ytr, Xte, yte = subspace_data
        order = np.random.default_rng(11).permutation(Xtr.shape[1])
        _, plain = SparseRepresentationClassifier(LabeledDictionary.from_columns(Xtr, ytr), solver).evaluate(Xte, yte)
        _, shuffled = SparseRepresentationClassifier(
            LabeledDictionary.from_columns(Xtr[:, order], ytr[order]), solver
        ).evaluate(Xte, yte)
        assert plain["predicted_class"].tolist() == shuffled["predicted_class"].tolist()

    @pytest.mark.parametrize("solver", ["l2", "l2l2", "bgmp"])
    def test_scaling_invariance(self, subspace_data, solver):
        # powers of two scale every intermediate exactly; lambda is 0 so lambda * c stays 0
        Xtr, ytr, Xte, yte = subspace_data
        d = LabeledDictionary.from_columns(Xtr, ytr)
        _, plain = SparseRepresentationClassifier(d, solver).evaluate(Xte, yte)
        for c in (0.25, 8.0):
            _, scaled = SparseRepresentationClassifier(d, solver).evaluate(c * Xte, yte)
            assert plain["predicted_class"].tolist() == scaled["predicted_class"].tolist()

    def test_wrong_length_vector(self, orthogonal_dictionary):
        model = SparseRepresentationClassifier(orthogonal_dictionary, "l2").fit()
        with pytest.raises(DimensionMismatchError):
            model.classify(np.ones(5))

    def test_unknown_solver(self, orthogonal_dictionary):
        with pytest.raises(InvalidArgumentError):
            SparseRepresentationClassifier(orthogonal_dictionary, "sp")

    def test_lasso_zero_signal(self, orthogonal_dictionary):
        model = SparseRepresentationClassifier(orthogonal_dictionary, "pg-lasso")
        coef, sparsity = model.code(np.zeros(6))
        assert sparsity == 0 and not coef.any()


class TestEvaluate:
    def test_report_consistent_with_predictions(self, subspace_data):
        Xtr, ytr, Xte, yte = subspace_data
        d = LabeledDictionary.from_columns(Xtr, ytr)
        report, predictions = SparseRepresentationClassifier(d, "bgmp").evaluate(Xte, yte)
        assert report.n_samples == len(predictions) == Xte.shape[1]
        assert report.accuracy == report.n_correct / report.n_samples
        assert report.n_correct == int(predictions["correct"].sum())
        assert set(report.per_class_accuracy) == {0, 1, 2, 3}
        assert list(predictions.columns) == [
            "sample_id", "true_class", "predicted_class", "sparsity", "wall_ms", "error", "correct",
        ]
        assert report.accuracy >= 0.95

    def test_dense_solvers_report_full_sparsity(self, subspace_data):
        Xtr, ytr, Xte, yte = subspace_data
        d = LabeledDictionary.from_columns(Xtr, ytr)
        report = evaluate(d, Xte[:, :5], yte[:5], "l2l2")
        assert report.mean_sparsity == d.A.m

    def test_workers_do_not_change_predictions(self, subspace_data):
        Xtr, ytr, Xte, yte = subspace_data
        d = LabeledDictionary.from_columns(Xtr, ytr)
        _, serial = SparseRepresentationClassifier(d, "bomp").evaluate(Xte, yte)
        _, threaded = SparseRepresentationClassifier(d, "bomp", ClassifierConfig(workers=3)).evaluate(Xte, yte)
        assert serial["predicted_class"].tolist() == threaded["predicted_class"].tolist()

    def test_empty_test_set(self, orthogonal_dictionary):
        with pytest.raises(InvalidArgumentError):
            evaluate(orthogonal_dictionary, np.empty((6, 0)), [])

    def test_linalg_failure_counts_as_miss(self, orthogonal_dictionary, monkeypatch):
        model = SparseRepresentationClassifier(orthogonal_dictionary, "l2")

        def broken(y):
            raise np.linalg.LinAlgError("Singular matrix")

        monkeypatch.setattr(model, "code", broken)
        report, predictions = model.evaluate(np.eye(6)[:, [0, 2]], ["a", "b"])
        assert report.n_failed == 2
        assert report.accuracy == 0.0
        assert predictions["error"].tolist() == ["Singular matrix", "Singular matrix"]

    @pytest.mark.slow
    def test_duplicated_training_columns(self):
        # 5 classes, 4-dim subspaces in 200 dims, 40 train / 20 test per class, 30% near-duplicates
        bgmp_correct = l2_correct = total = 0
        for seed in range(10):
            Xtr, ytr, Xte, yte = synthetic_subspace_dataset(duplicate_frac=0.3, seed=seed)
            d = LabeledDictionary.from_columns(Xtr, ytr)
            bgmp = evaluate(d, Xte, yte, "bgmp")
            l2 = evaluate(d, Xte, yte, "l2")
            assert l2.n_samples == bgmp.n_samples == 100
            bgmp_correct += bgmp.n_correct
            l2_correct += l2.n_correct
            total += bgmp.n_samples
        assert bgmp_correct / total >= 0.95
        assert bgmp_correct >= l2_correct


def test_report_rejects_inconsistent_accuracy():
    with pytest.raises(InvalidArgumentError):
        ClassifyReport("bgmp", 0.5, 1.0, {}, 1.0, n_samples=4, n_correct=3)


def test_design_matrix_shared_with_solvers(orthogonal_dictionary):
    assert isinstance(orthogonal_dictionary.A, DesignMatrix)
