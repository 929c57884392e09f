import numpy as np
import pytest

from conftest import random_datapoint, random_table
from scenekg.anomaly import (
    AnomalyDatapoint,
    InferenceConfig,
    anomaly_score,
    detect,
    evaluate_topk,
    object_score,
    predict_scenes,
    read_datapoints,
    scene_score,
    sweep,
    write_datapoints,
)
from scenekg.errors import ConfigError, DataError
from scenekg.scoring import ScoreTable


def table_from(objects, scenes, ln, al) -> ScoreTable:
    return ScoreTable(
        objects, scenes, located_near=np.asarray(ln, float), at_location=np.asarray(al, float)
    )


def datapoint(objects, anomaly, scene_type="somewhere") -> AnomalyDatapoint:
    return AnomalyDatapoint(scene_type=scene_type, objects=tuple(objects), anomaly_label=anomaly)


# -- object score ---------------------------------------------------------------


def test_object_score_single_other_is_that_score():
    table = random_table(np.random.default_rng(0), n_objects=4)
    value = object_score(table, "o00", ["o00", "o02"])
    assert value == table.ln("o00", "o02")


def test_object_score_matches_hand_arithmetic():
    ln = [
        [0.0, -1.0, -2.0, -3.0],
        [-1.0, 0.0, -4.0, -5.0],
        [-2.0, -4.0, 0.0, -6.0],
        [-3.0, -5.0, -6.0, 0.0],
    ]
    table = table_from(["a", "b", "c", "d"], ["s"], ln, [[-1.0]] * 4)
    value = object_score(table, "a", ["a", "b", "c", "d"])
    assert value == pytest.approx((-1.0 - 2.0 - 3.0) / 3.0)


def test_object_score_ignores_duplicate_labels():
    table = random_table(np.random.default_rng(1), n_objects=5)
    base = object_score(table, "o00", ["o00", "o01", "o02"])
    with_dup = object_score(table, "o00", ["o00", "o01", "o02", "o01"])
    assert base == with_dup


def test_object_score_skips_unresolvable_labels():
    table = random_table(np.random.default_rng(2), n_objects=4)
    base = object_score(table, "o00", ["o00", "o01"])
    padded = object_score(table, "o00", ["o00", "o01", "never seen"])
    assert base == padded
    with pytest.raises(DataError):
        object_score(table, "o00", ["o00", "never seen"])
    with pytest.raises(DataError):
        object_score(table, "never seen", ["never seen", "o00"])


# -- scene prediction --------------------------------------------------------------


def test_predict_scenes_returns_all_when_m_is_scene_count():
    table = random_table(np.random.default_rng(3), n_objects=5, n_scenes=4)
    ranked = predict_scenes(table, ["o00", "o01"], m=4)
    assert len(ranked) == 4
    scores = [s for _, s in ranked]
    assert scores == sorted(scores, reverse=True)
    assert {label for label, _ in ranked} == set(table.scene_labels)


def test_predict_scenes_dominant_scene_first():
    al = [[-0.1, -5.0], [-0.2, -4.0], [-0.1, -6.0]]
    table = table_from(["a", "b", "c"], ["kitchen", "attic"], np.zeros((3, 3)), al)
    ranked = predict_scenes(table, ["a", "b", "c"], m=1)
    assert ranked[0][0] == "kitchen"


def test_predict_scenes_matches_full_sort_oracle():
    rng = np.random.default_rng(4)
    table = random_table(rng, n_objects=8, n_scenes=5)
    objects = ["o00", "o03", "o05"]
    ranked = predict_scenes(table, objects, m=3)
    # oracle: average each scene column over the objects, sort all means
    means = {}
    for scene in table.scene_labels:
        means[scene] = float(
            np.mean([table.al(o, scene) for o in objects])
        )
    expected = sorted(means, key=lambda s: (-means[s], s))[:3]
    assert [label for label, _ in ranked] == expected
    for label, value in ranked:
        assert value == pytest.approx(means[label], abs=1e-12)


def test_predict_scenes_clamps_m_with_warning():
    table = random_table(np.random.default_rng(5), n_objects=4, n_scenes=2)
    assert len(predict_scenes(table, ["o00"], m=99)) == 2


def test_predict_scenes_tie_break_is_lexicographic():
    al = [[-1.0, -1.0, -0.5]]
    table = table_from(["a"], ["zoo", "bar", "spa"], np.zeros((1, 1)), al)
    ranked = predict_scenes(table, ["a"], m=3)
    assert [label for label, _ in ranked] == ["spa", "bar", "zoo"]


# -- scene score ------------------------------------------------------------------


def test_scene_score_single_scene():
    table = random_table(np.random.default_rng(6), n_objects=3, n_scenes=3)
    assert scene_score(table, "o01", ["s02"]) == table.al("o01", "s02")


def test_scene_score_hand_mean():
    al = [[-1.0, -3.0]]
    table = table_from(["a"], ["s1", "s2"], np.zeros((1, 1)), al)
    assert scene_score(table, "a", ["s1", "s2"]) == pytest.approx(-2.0)


def test_scene_score_constant_row_invariant_to_m():
    al = [[-1.5, -1.5, -1.5, -1.5]]
    table = table_from(["a"], ["s1", "s2", "s3", "s4"], np.zeros((1, 1)), al)
    for m in (1, 2, 3, 4):
        scenes = [f"s{i+1}" for i in range(m)]
        assert scene_score(table, "a", scenes) == pytest.approx(-1.5)


def test_scene_score_requires_scenes():
    table = random_table(np.random.default_rng(7))
    with pytest.raises(ConfigError):
        scene_score(table, "o00", [])


# -- anomaly score ------------------------------------------------------------------


def test_anomaly_score_boundaries_and_hand_value():
    assert anomaly_score(-2.0, -4.0, alpha=1.0) == 2.0
    assert anomaly_score(-2.0, -4.0, alpha=0.0) == 4.0
    assert anomaly_score(-2.0, -4.0, alpha=0.5) == pytest.approx(3.0)
    with pytest.raises(ConfigError):
        anomaly_score(-1.0, -1.0, alpha=1.5)
    with pytest.raises(ConfigError):
        anomaly_score(-1.0, -1.0, alpha=-0.1)


def test_inference_config_validation():
    InferenceConfig(alpha=0.5, m=2).validate()
    with pytest.raises(ConfigError):
        InferenceConfig(alpha=2.0, m=1).validate()
    with pytest.raises(ConfigError):
        InferenceConfig(alpha=0.5, m=0).validate()


# -- detect ----------------------------------------------------------------------


def test_detect_two_objects_tie_on_object_score():
    rng = np.random.default_rng(8)
    table = random_table(rng, n_objects=6, n_scenes=4)
    dp = datapoint(["o01", "o04"], "o01")
    ranking = detect(table, dp, InferenceConfig(alpha=0.6, m=2))
    scores = {c.label: c for c in ranking.candidates}
    # mutual symmetrized scores are equal, so the scene term decides
    assert scores["o01"].object_score == scores["o04"].object_score
    worse_scene = min(ranking.candidates, key=lambda c: c.scene_score)
    assert ranking.prediction == worse_scene.label


def test_detect_alpha_one_two_objects_breaks_ties_lexicographically():
    table = random_table(np.random.default_rng(9), n_objects=5)
    ranking = detect(table, datapoint(["o03", "o01"], "o03"), InferenceConfig(alpha=1.0, m=1))
    assert [c.label for c in ranking.candidates] == ["o01", "o03"]


def test_detect_flags_planted_cross_cluster_object(tiny_table, tiny_world):
    _, _, affinity = tiny_world
    # objects of scene_00's cluster plus one object exclusive to scene_02
    cluster0 = sorted(o for o, types in affinity.items() if types == ["scene_00"])[:5]
    alien = sorted(o for o, types in affinity.items() if types == ["scene_02"])[0]
    dp = datapoint(cluster0 + [alien], alien, scene_type="scene_00")
    ranking = detect(tiny_table, dp, InferenceConfig(alpha=1.0, m=2))
    assert ranking.prediction == alien


def test_detect_shares_scene_prediction_across_candidates():
    rng = np.random.default_rng(10)
    table = random_table(rng, n_objects=7, n_scenes=5)
    dp = random_datapoint(rng, table, n_objects=4)
    config = InferenceConfig(alpha=0.3, m=2)
    ranking = detect(table, dp, config)
    expected_scenes = [label for label, _ in predict_scenes(table, list(dp.objects), 2)]
    assert ranking.predicted_scenes == expected_scenes
    for cand in ranking.candidates:
        assert cand.scene_score == scene_score(table, cand.label, expected_scenes)


def test_detect_requires_two_resolvable_objects():
    table = random_table(np.random.default_rng(11), n_objects=4)
    dp = datapoint(["o00", "ghost"], "o00")
    with pytest.raises(DataError):
        detect(table, dp, InferenceConfig())


def test_detect_is_idempotent():
    rng = np.random.default_rng(12)
    table = random_table(rng)
    dp = random_datapoint(rng, table)
    config = InferenceConfig(alpha=0.4, m=2)
    assert detect(table, dp, config) == detect(table, dp, config)


def test_detect_context_regression_same_object_flagged_only_out_of_context():
    # driveway objects mutually close; garden objects (including broccoli)
    # mutually close; broccoli is alien to the driveway set and milk to both
    objects = ["broccoli", "window", "line", "road", "car", "rosemary", "jalapeno", "pile", "milk"]
    idx = {o: i for i, o in enumerate(objects)}
    n = len(objects)
    ln = np.full((n, n), -2.0)
    driveway_cluster = ["window", "line", "road", "car"]
    garden_cluster = ["rosemary", "jalapeno", "broccoli", "pile"]
    for cluster in (driveway_cluster, garden_cluster):
        for a in cluster:
            for b in cluster:
                ln[idx[a], idx[b]] = -0.2
    for o in objects:
        ln[idx["milk"], idx[o]] = ln[idx[o], idx["milk"]] = -2.5
    al = np.full((n, 2), -1.5)
    scenes = ["driveway", "garden"]
    for o in driveway_cluster:
        al[idx[o], 0] = -0.3
    for o in garden_cluster:
        al[idx[o], 1] = -0.3
    table = table_from(objects, scenes, ln, al)
    config = InferenceConfig(alpha=1.0, m=1)

    in_driveway = datapoint(
        ["broccoli", "window", "line", "road", "car"], "broccoli", scene_type="driveway"
    )
    assert detect(table, in_driveway, config).prediction == "broccoli"

    in_garden = datapoint(
        ["rosemary", "jalapeno", "broccoli", "pile", "milk"], "milk", scene_type="garden"
    )
    ranking = detect(table, in_garden, config)
    assert ranking.prediction == "milk"
    assert ranking.candidates[-1].label != "broccoli"  # broccoli is not flagged in context


def test_mean_denominator_convention_preserves_argmax_at_full_object_weight():
    # dividing the object score by the object count instead of the summand
    # count rescales every candidate identically, so the ranking at alpha=1
    # is unchanged
    rng = np.random.default_rng(13)
    table = random_table(rng, n_objects=8)
    for _ in range(20):
        dp = random_datapoint(rng, table, n_objects=5)
        ranking = detect(table, dp, InferenceConfig(alpha=1.0, m=1))
        n = len(dp.objects)
        # anomaly score under the other convention is -object_score*(n-1)/n;
        # sorting by it descending equals sorting by the rescaled mean ascending
        rescaled = sorted((c.object_score * (n - 1) / n, c.label) for c in ranking.candidates)
        assert [label for _, label in rescaled] == [c.label for c in ranking.candidates]


# -- invariances -------------------------------------------------------------------


def test_alpha_one_ranking_independent_of_m():
    rng = np.random.default_rng(14)
    table = random_table(rng, n_objects=9, n_scenes=6)
    for _ in range(25):
        dp = random_datapoint(rng, table, n_objects=5)
        rankings = [
            [c.label for c in detect(table, dp, InferenceConfig(alpha=1.0, m=m)).candidates]
            for m in (1, 3, 5)
        ]
        assert rankings[0] == rankings[1] == rankings[2]


def test_alpha_zero_ranking_independent_of_ln_entries():
    rng = np.random.default_rng(15)
    base = random_table(rng, n_objects=7, n_scenes=4)
    shuffled = ScoreTable(
        base.object_labels,
        base.scene_labels,
        located_near=-rng.uniform(0, 5, size=base.located_near.shape),
        at_location=base.at_location.copy(),
    )
    for _ in range(25):
        dp = random_datapoint(rng, base, n_objects=4)
        config = InferenceConfig(alpha=0.0, m=2)
        a = [c.label for c in detect(base, dp, config).candidates]
        b = [c.label for c in detect(shuffled, dp, config).candidates]
        assert a == b


def test_positive_affine_transform_preserves_ranking_order():
    rng = np.random.default_rng(16)
    base = random_table(rng, n_objects=8, n_scenes=5)
    for _ in range(25):
        scale = float(rng.uniform(0.1, 3.0))
        shift = float(rng.uniform(-2.0, 2.0))
        transformed = ScoreTable(
            base.object_labels,
            base.scene_labels,
            located_near=scale * base.located_near + shift,
            at_location=scale * base.at_location + shift,
        )
        dp = random_datapoint(rng, base, n_objects=5)
        config = InferenceConfig(alpha=float(rng.uniform(0, 1)), m=2)
        a = detect(base, dp, config)
        b = detect(transformed, dp, config)
        assert [c.label for c in a.candidates] == [c.label for c in b.candidates]
        assert a.predicted_scenes == b.predicted_scenes
        for ca, cb in zip(a.candidates, b.candidates):
            assert cb.anomaly_score == pytest.approx(scale * ca.anomaly_score - shift, rel=1e-9)


def test_object_order_permutation_preserves_ranking():
    rng = np.random.default_rng(17)
    table = random_table(rng, n_objects=9, n_scenes=4)
    for _ in range(25):
        dp = random_datapoint(rng, table, n_objects=5)
        config = InferenceConfig(alpha=0.5, m=2)
        base = detect(table, dp, config)
        perm = list(dp.objects)
        rng.shuffle(perm)
        permuted = AnomalyDatapoint(
            scene_type=dp.scene_type, objects=tuple(perm), anomaly_label=dp.anomaly_label
        )
        other = detect(table, permuted, config)
        assert [c.label for c in base.candidates] == [c.label for c in other.candidates]
        assert base.predicted_scenes == other.predicted_scenes


def test_removing_non_top_object_shifts_scores_within_bound():
    rng = np.random.default_rng(18)
    table = random_table(rng, n_objects=10)
    max_ln = float(np.abs(table.located_near).max())
    for _ in range(20):
        dp = random_datapoint(rng, table, n_objects=6)
        config = InferenceConfig(alpha=1.0, m=1)
        before = {c.label: c.object_score for c in detect(table, dp, config).candidates}
        removable = [o for o in dp.objects if o != dp.anomaly_label][-1]
        remaining = tuple(o for o in dp.objects if o != removable)
        anomaly = dp.anomaly_label if dp.anomaly_label != removable else remaining[0]
        smaller = AnomalyDatapoint(
            scene_type=dp.scene_type, objects=remaining, anomaly_label=anomaly
        )
        after = {c.label: c.object_score for c in detect(table, smaller, config).candidates}
        n = len(dp.objects)
        for label, value in after.items():
            assert abs(value - before[label]) <= max_ln / (n - 2) + 1e-12


# -- dataset evaluation ---------------------------------------------------------------


def test_topk_accuracy_is_one_when_k_covers_all_objects():
    rng = np.random.default_rng(19)
    table = random_table(rng)
    dataset = [random_datapoint(rng, table, n_objects=4) for _ in range(10)]
    report = evaluate_topk(table, dataset, InferenceConfig(alpha=0.5, m=2), [4])
    assert report.top_k_accuracy[4] == 1.0


def test_topk_matches_recount_oracle():
    rng = np.random.default_rng(20)
    table = random_table(rng, n_objects=12, n_scenes=5)
    dataset = [random_datapoint(rng, table, n_objects=5) for _ in range(60)]
    config = InferenceConfig(alpha=0.8, m=3)
    report = evaluate_topk(table, dataset, config, [1, 3])
    for k in (1, 3):
        hits = 0
        for dp in dataset:
            labels = [c.label for c in detect(table, dp, config).candidates[:k]]
            hits += dp.anomaly_label in labels
        assert report.top_k_accuracy[k] == pytest.approx(hits / len(dataset))
    assert report.n_evaluated == len(dataset)
    assert report.n_skipped == 0


def test_topk_counts_misses_by_label():
    # two-object inputs at alpha=1 rank lexicographically on ties, so an
    # anomaly that sorts after its partner is always missed at k=1
    table = table_from(["a", "b"], ["s"], np.zeros((2, 2)), [[-1.0], [-1.0]])
    dataset = [datapoint(["a", "b"], "b")]
    report = evaluate_topk(table, dataset, InferenceConfig(alpha=1.0, m=1), [1, 2])
    assert report.top_k_accuracy == {1: 0.0, 2: 1.0}
    assert report.miss_counts[1] == {"b": 1}
    assert report.miss_counts[2] == {}


def test_topk_skips_unresolvable_anomalies_with_reason():
    rng = np.random.default_rng(21)
    table = random_table(rng)
    good = random_datapoint(rng, table, n_objects=4)
    bad = datapoint(["o00", "ghost"], "ghost")
    report = evaluate_topk(table, [good, bad], InferenceConfig(alpha=1.0, m=1), [1])
    assert report.n_total == 2
    assert report.n_evaluated == 1
    assert report.skip_reasons == {"anomaly_out_of_vocabulary": 1}


def test_topk_scene_accuracy_uses_true_scene_type():
    al = [[-0.1, -5.0], [-0.2, -5.0], [-9.0, -0.1]]
    table = table_from(["a", "b", "c"], ["kitchen", "attic"], np.zeros((3, 3)), al)
    dp = datapoint(["a", "b"], "b", scene_type="kitchen")
    report = evaluate_topk(table, [dp], InferenceConfig(alpha=1.0, m=1), [1, 2])
    assert report.scene_top_k_accuracy == {1: 1.0, 2: 1.0}
    wrong = datapoint(["a", "b"], "b", scene_type="attic")
    report = evaluate_topk(table, [wrong], InferenceConfig(alpha=1.0, m=1), [1, 2])
    assert report.scene_top_k_accuracy == {1: 0.0, 2: 1.0}


def test_evaluate_topk_rejects_empty_dataset():
    table = random_table(np.random.default_rng(22))
    with pytest.raises(ConfigError):
        evaluate_topk(table, [], InferenceConfig(), [1])


# -- sweep --------------------------------------------------------------------------


def test_sweep_alpha_one_rows_identical_across_m():
    rng = np.random.default_rng(23)
    table = random_table(rng, n_objects=8, n_scenes=5)
    dataset = [random_datapoint(rng, table, n_objects=4) for _ in range(15)]
    cells = sweep(table, dataset, [1.0], [1, 3, 5], [1])
    accuracies = {cell.m: cell.accuracy for cell in cells}
    assert len(set(accuracies.values())) == 1


def test_sweep_cells_match_independent_evaluation():
    rng = np.random.default_rng(24)
    table = random_table(rng, n_objects=8, n_scenes=5)
    dataset = [random_datapoint(rng, table, n_objects=4) for _ in range(15)]
    alphas, ms, ks = [0.0, 0.5, 1.0], [1, 2, 3], [1]
    cells = sweep(table, dataset, alphas, ms, ks)
    assert len(cells) == 9
    for cell in cells:
        report = evaluate_topk(table, dataset, InferenceConfig(cell.alpha, cell.m), ks)
        assert cell.accuracy == report.top_k_accuracy[cell.k]


# -- datapoint serialization -----------------------------------------------------------


def test_datapoint_jsonl_round_trip(tmp_path):
    rng = np.random.default_rng(25)
    table = random_table(rng)
    points = [random_datapoint(rng, table) for _ in range(5)]
    path = tmp_path / "points.jsonl"
    write_datapoints(path, points)
    loaded, rejects = read_datapoints(path)
    assert loaded == points
    assert rejects == []


def test_datapoint_parse_validates(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(
        '{"scene_type": "kitchen", "objects": ["a", "b"], "anomaly": "zebra"}\n'
        '{"scene_type": "kitchen", "objects": ["a"], "anomaly": "a"}\n'
        '{"scene_type": "kitchen", "objects": ["a", "b"], "anomaly": "b"}\n'
    )
    loaded, rejects = read_datapoints(path)
    assert len(loaded) == 1
    assert [r.line for r in rejects] == [1, 2]
