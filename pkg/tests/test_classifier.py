import numpy as np
import pytest

from sparsemine.classifier import (
    ClassMap,
    ModelMismatchError,
    classify_survey,
    confusion_matrix,
    cross_validate,
    export_class_map_csv,
    export_class_map_pgm,
    export_confusion_csv,
    pcc,
    rbf_kernel,
    rbf_kernel_matrix,
    stratified_folds,
    svm_train_binary,
    svm_train_multiclass,
)
from sparsemine.dictionary_learning import Dictionary
from sparsemine.sparse_coding import StopRule


def blobs(rng, centers, n_per, spread=0.25):
    """Gaussian blobs as feature columns with integer labels."""
    cols, labels = [], []
    for cls, center in enumerate(centers):
        pts = np.asarray(center)[:, None] + spread * rng.standard_normal(
            (len(center), n_per)
        )
        cols.append(pts)
        labels.extend([cls] * n_per)
    return np.hstack(cols), np.asarray(labels)


def test_rbf_kernel_values():
    x = np.array([1.0, 0.0])
    z = np.array([0.0, 0.0])
    assert rbf_kernel(x, x, gamma=1.0) == pytest.approx(1.0)
    assert rbf_kernel(x, z, gamma=1e-12) == pytest.approx(1.0, abs=1e-9)
    assert rbf_kernel(x, z, gamma=np.log(2.0)) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        rbf_kernel(x, z, gamma=0.0)


def test_rbf_kernel_matrix_psd():
    rng = np.random.default_rng(0)
    for _ in range(5):
        X = rng.standard_normal((6, 20))
        K = rbf_kernel_matrix(X, X, gamma=0.7)
        assert np.allclose(K, K.T, atol=1e-12)
        eigs = np.linalg.eigvalsh(K)
        assert eigs.min() >= -1e-8


def test_svm_binary_separable_toy():
    X = np.array([[0.0, 0.0, 4.0, 4.0], [0.0, 1.0, 3.0, 4.0]])
    y = np.array([-1.0, -1.0, 1.0, 1.0])
    model = svm_train_binary(X, y, c=10.0, gamma=0.5)
    assert model.converged
    assert np.all(np.sign(model.decision(X)) == y)
    assert model.kkt_violation < 1e-3
    assert model.alpha_balance < 1e-6
    assert np.all(np.abs(model.dual_coef) <= 10.0 + 1e-9)


def test_svm_binary_label_flip_negates_decision():
    rng = np.random.default_rng(1)
    X, labels = blobs(rng, [(0, 0), (2.5, 2.5)], 15)
    y = np.where(labels == 0, -1.0, 1.0)
    a = svm_train_binary(X, y, c=5.0, gamma=0.8)
    b = svm_train_binary(X, -y, c=5.0, gamma=0.8)
    assert np.abs(a.decision(X) + b.decision(X)).max() < 1e-6


def test_svm_binary_duplicated_data_same_predictions():
    rng = np.random.default_rng(2)
    X, labels = blobs(rng, [(0, 0), (3, 3)], 12)
    y = np.where(labels == 0, -1.0, 1.0)
    grid = rng.uniform(-1.5, 4.5, (2, 50))
    a = svm_train_binary(X, y, c=2.0, gamma=0.6)
    b = svm_train_binary(np.hstack([X, X]), np.concatenate([y, y]), c=2.0, gamma=0.6)
    assert np.array_equal(np.sign(a.decision(grid)), np.sign(b.decision(grid)))


def test_svm_binary_dual_objective_monotone():
    rng = np.random.default_rng(3)
    X, labels = blobs(rng, [(0, 0), (1.5, 1.5)], 20, spread=0.6)
    y = np.where(labels == 0, -1.0, 1.0)
    model = svm_train_binary(X, y, c=1.0, gamma=0.5, track_objective=True)
    trace = np.asarray(model.objective_trace)
    assert trace.size > 1
    assert np.all(np.diff(trace) >= -1e-12)


def test_svm_binary_rejects_single_class():
    X = np.zeros((2, 4))
    with pytest.raises(ValueError):
        svm_train_binary(X, np.ones(4), c=1.0, gamma=1.0)


def test_svm_binary_kkt_on_random_instances():
    rng = np.random.default_rng(4)
    for trial in range(5):
        X, labels = blobs(rng, [(0, 0), (1.2, 0.8)], 25, spread=0.7)
        y = np.where(labels == 0, -1.0, 1.0)
        model = svm_train_binary(X, y, c=3.0, gamma=1.0)
        assert model.converged
        assert model.kkt_violation < 1e-3
        assert model.alpha_balance < 1e-6


def test_multiclass_reduces_to_binary_for_two_classes():
    rng = np.random.default_rng(5)
    X, labels = blobs(rng, [(0, 0), (3, 3)], 10)
    model = svm_train_multiclass(X, labels, c=2.0, gamma=0.5)
    binary = model.binaries[(0, 1)]
    pred = model.predict(X)
    assert np.array_equal(pred, np.where(binary.decision(X) >= 0, 0, 1))


def test_multiclass_three_blobs_training_accuracy():
    rng = np.random.default_rng(6)
    X, labels = blobs(rng, [(0, 0), (3, 0), (0, 3)], 20)
    model = svm_train_multiclass(X, labels, c=10.0, gamma=0.5)
    assert np.mean(model.predict(X) == labels) >= 0.95


def test_multiclass_tie_breaks_to_lowest_class():
    # Three classes, one point equidistant in kernel space from all three:
    # every pairwise vote is possible, lowest id must win any full tie.
    X = np.array([[0.0, 2.0, 4.0], [0.0, 0.0, 0.0]])
    labels = np.array([0, 1, 2])
    model = svm_train_multiclass(X, labels, c=1.0, gamma=0.1)
    probe = np.array([[2.0], [10.0]])  # far away: decisions near the bias
    pred = model.predict(probe)
    votes = np.zeros(3)
    for (a, b), m in model.binaries.items():
        d = m.decision(probe)[0]
        votes[a if d >= 0 else b] += 1
    assert pred[0] == np.argmax(votes)  # argmax takes the lowest id on ties


def test_multiclass_requires_two_classes():
    with pytest.raises(ValueError):
        svm_train_multiclass(np.zeros((3, 5)), np.ones(5, dtype=int), 1.0, 1.0)


def test_stratified_folds_deterministic_and_warning():
    labels = np.array([0] * 25 + [1] * 3)
    with pytest.warns(UserWarning, match="shrinking folds"):
        fold = stratified_folds(labels, folds=10)
    assert fold.max() == 2
    assert np.array_equal(fold, stratified_folds(labels, folds=3))
    for cls in (0, 1):
        counts = np.bincount(fold[labels == cls])
        assert counts.max() - counts.min() <= 1


def test_cross_validate_single_point_grid():
    rng = np.random.default_rng(7)
    X, labels = blobs(rng, [(0, 0), (3, 3)], 12)
    c, gamma, accs = cross_validate(X, labels, [2.0], [0.5], folds=4)
    assert (c, gamma) == (2.0, 0.5)
    assert accs.shape == (1, 1, 4)
    assert np.all((accs >= 0) & (accs <= 1))


def test_cross_validate_separable_blobs_high_accuracy():
    rng = np.random.default_rng(8)
    X, labels = blobs(rng, [(0, 0), (4, 4), (0, 4)], 20)
    c, gamma, accs = cross_validate(X, labels, [1.0, 10.0], [0.25, 1.0], folds=5)
    assert accs.mean(axis=2).max() >= 0.95


def test_cross_validate_tie_prefers_smaller_parameters():
    rng = np.random.default_rng(9)
    X, labels = blobs(rng, [(0, 0), (5, 5)], 10)  # everything separates
    c, gamma, accs = cross_validate(X, labels, [1.0, 10.0], [0.5, 2.0], folds=2)
    mean = accs.mean(axis=2)
    assert mean.max() == mean[0, 0]
    assert (c, gamma) == (1.0, 0.5)


def test_cross_validate_empty_grid_rejected():
    with pytest.raises(ValueError):
        cross_validate(np.zeros((2, 6)), np.array([0, 0, 0, 1, 1, 1]), [], [1.0])


class _Survey:
    def __init__(self, profiles, geometry):
        self.profiles = profiles
        self.geometry = geometry


@pytest.fixture()
def coded_survey():
    rng = np.random.default_rng(10)
    atoms = rng.standard_normal((20, 12))
    atoms /= np.linalg.norm(atoms, axis=0)
    dictionary = Dictionary(atoms, config_hash=1234, seed=0)
    codes = np.zeros((12, 24))
    labels = np.zeros(24, dtype=int)
    for i in range(24):
        cls = i % 2
        labels[i] = cls
        sup = [cls * 3, cls * 3 + 1]
        codes[sup, i] = (2.0 + rng.uniform(0, 0.5, 2)) * (1 if cls else -1)
    profiles = atoms @ codes
    return dictionary, profiles, labels


def test_classify_survey_round_trip(coded_survey):
    dictionary, profiles, labels = coded_survey
    stop = StopRule(max_nonzeros=2)
    from sparsemine.sparse_coding import batch_omp

    codes = batch_omp(profiles, dictionary.atoms, stop)
    model = svm_train_multiclass(codes, labels, 10.0, 0.5,
                                 dict_config_hash=dictionary.config_hash)
    survey = _Survey(profiles, (6, 4))
    out = classify_survey(dictionary, model, survey, stop)
    assert isinstance(out, ClassMap)
    assert np.array_equal(out.labels, labels)


def test_classify_survey_hash_mismatch(coded_survey):
    dictionary, profiles, labels = coded_survey
    stop = StopRule(max_nonzeros=2)
    from sparsemine.sparse_coding import batch_omp

    codes = batch_omp(profiles, dictionary.atoms, stop)
    model = svm_train_multiclass(codes, labels, 10.0, 0.5, dict_config_hash=999)
    survey = _Survey(profiles, (6, 4))
    with pytest.raises(ModelMismatchError, match="dictionary/model mismatch"):
        classify_survey(dictionary, model, survey, stop)
    model.dict_config_hash = None
    with pytest.raises(ModelMismatchError, match="not bound"):
        classify_survey(dictionary, model, survey, stop)


def test_classify_survey_full_mask_identity(coded_survey):
    dictionary, profiles, labels = coded_survey
    stop = StopRule(max_nonzeros=2)
    from sparsemine.sparse_coding import batch_omp

    codes = batch_omp(profiles, dictionary.atoms, stop)
    model = svm_train_multiclass(codes, labels, 10.0, 0.5,
                                 dict_config_hash=dictionary.config_hash)
    survey = _Survey(profiles, (6, 4))
    full = classify_survey(dictionary, model, survey, stop,
                           mask=np.arange(profiles.shape[0]))
    plain = classify_survey(dictionary, model, survey, stop)
    assert np.array_equal(full.labels, plain.labels)


def test_classify_survey_pixel_order_invariant(coded_survey):
    dictionary, profiles, labels = coded_survey
    stop = StopRule(max_nonzeros=2)
    from sparsemine.sparse_coding import batch_omp

    codes = batch_omp(profiles, dictionary.atoms, stop)
    model = svm_train_multiclass(codes, labels, 10.0, 0.5,
                                 dict_config_hash=dictionary.config_hash)
    perm = np.random.default_rng(11).permutation(24)
    a = classify_survey(dictionary, model, _Survey(profiles, (6, 4)), stop)
    b = classify_survey(dictionary, model, _Survey(profiles[:, perm], (6, 4)), stop)
    assert np.array_equal(a.labels[perm], b.labels)


def test_confusion_matrix_perfect_and_columns():
    truth = np.array([0, 0, 1, 1, 2, 2])
    cm = confusion_matrix(truth.copy(), truth)
    assert np.allclose(cm.probabilities, np.eye(3))
    assert np.allclose(cm.probabilities.sum(axis=0), 1.0, atol=1e-9)


def test_confusion_matrix_all_clutter_predictions():
    truth = np.array([0, 0, 1, 1])
    pred = np.zeros(4, dtype=int)
    cm = confusion_matrix(pred, truth, classes=[0, 1])
    assert np.allclose(cm.probabilities[:, 0], [1.0, 0.0])
    assert np.allclose(cm.probabilities[:, 1], [1.0, 0.0])


def test_confusion_matrix_hand_counted():
    truth = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2])
    pred = np.array([0, 1, 0, 1, 1, 2, 2, 2, 0])
    cm = confusion_matrix(pred, truth)
    want_counts = np.array([
        [2, 0, 1],
        [1, 2, 0],
        [0, 1, 2],
    ])
    assert np.array_equal(cm.counts, want_counts)
    assert np.allclose(cm.probabilities, want_counts / 3.0)


def test_confusion_matrix_missing_class_flagged():
    truth = np.array([0, 0, 0])
    pred = np.array([0, 1, 0])
    cm = confusion_matrix(pred, truth, classes=[0, 1])
    assert cm.missing_classes == [1]
    assert np.allclose(cm.probabilities[:, 1], 0.0)


def test_pcc_perfect_and_half():
    labels = np.zeros(20, dtype=int)
    labels[[3, 4, 5, 6]] = 1
    halos = [(1, np.array([3, 4, 5, 6]))]
    perfect = pcc(labels.copy(), halos, labels)
    assert perfect[1] == 1.0 and perfect[0] == 1.0

    half = labels.copy()
    half[[3, 4]] = 0  # half the halo declared clutter
    got = pcc(half, halos, labels)
    assert got[1] == 0.5
    assert got[0] == 1.0


def test_pcc_rejects_empty_halos():
    with pytest.raises(ValueError, match="empty halo"):
        pcc(np.zeros(4, dtype=int), [], np.zeros(4, dtype=int))
    with pytest.raises(ValueError, match="empty halo"):
        pcc(np.zeros(4, dtype=int), [(1, np.array([], dtype=int))],
            np.zeros(4, dtype=int))


def test_pcc_equals_confusion_diagonal_when_halo_is_class_region():
    rng = np.random.default_rng(12)
    labels = rng.integers(0, 3, 60)
    labels[:10] = 0  # ensure clutter present
    pred = labels.copy()
    flip = rng.choice(60, 15, replace=False)
    pred[flip] = rng.integers(0, 3, 15)
    halos = [(c, np.flatnonzero(labels == c)) for c in (1, 2)]
    got = pcc(pred, halos, labels)
    cm = confusion_matrix(pred, labels, classes=[0, 1, 2])
    for c in (1, 2):
        assert got[c] == pytest.approx(cm.probabilities[c, c])


def test_exports_write_parseable_files(tmp_path):
    cmap = ClassMap(labels=np.array([0, 1, 2, 3, 0, 1]), geometry=(3, 2))
    export_class_map_pgm(cmap, tmp_path / "m.pgm", n_classes=4)
    export_class_map_csv(cmap, tmp_path / "m.csv")
    pgm = (tmp_path / "m.pgm").read_text().splitlines()
    assert pgm[0] == "P2"
    assert pgm[1] == "3 2"
    assert pgm[2] == "255"
    grid = [row.split(",") for row in (tmp_path / "m.csv").read_text().splitlines()]
    assert grid == [["0", "1", "2"], ["3", "0", "1"]]

    cm = confusion_matrix(np.array([0, 1]), np.array([0, 1]),
                          class_names=("clutter", "mine"))
    export_confusion_csv(cm, tmp_path / "cm.csv")
    lines = (tmp_path / "cm.csv").read_text().splitlines()
    assert lines[0].endswith("clutter,mine")
    assert len(lines) == 3
