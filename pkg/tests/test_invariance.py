import math
from dataclasses import replace

import numpy as np
import pytest

from raterpsy.instrument import (
    DegenerateGroupingError,
    GroupAssignment,
    hate_speech_instrument,
)
from raterpsy.invariance import (
    HEADER,
    InvarianceLadder,
    SkippedSubscale,
    invariance_report,
    run_ladder,
    run_ladder_stats,
    run_subscale_ladders,
)
from raterpsy.report import SIGNIF_LEGEND
from raterpsy.sem import SampleStats, parse_model
from raterpsy.simulator import (
    PopulationModel,
    five_factor_population,
    perturb,
    sample,
    sample_arrays,
    standardized_group,
)

FIVE = parse_model(
    """
Violence =~ i1 + i2 + i4
Fear =~ i27 + i28 + i30
Impact =~ i6 + i8
Moral =~ i22 + i23
Groundless =~ i36 + i37 + i39
"""
)
TRIAD = parse_model("F =~ a + b + c")


def triad_population(n=150, seed=0):
    gp = standardized_group([[0.7], [0.5], [0.6]], [[1.0]], n=n)
    return PopulationModel(items=("a", "b", "c"), factors=("F",), groups=(gp, gp), group_labels=("g1", "g2"), seed=seed)


def stats_of(model, replication=0):
    return SampleStats.from_arrays(sample_arrays(model, replication), list(model.items), group_labels=model.labels)


def grouping_of(dataset, column="group"):
    labels = tuple(dataset.frame[column])
    return GroupAssignment(labels=labels, rule=column, levels=tuple(sorted(set(labels))))


def analytic_delta_df(p, k):
    return (p - k, p - k, p)


def test_five_factor_ladder_df_pattern():
    stats = stats_of(five_factor_population(85, groups=2, seed=3))
    ladder = run_ladder_stats(FIVE, stats)
    assert ladder.levels == ("configural", "weak", "strong", "strict")
    assert [s.fit.df for s in ladder.steps] == [110, 118, 126, 139]
    assert tuple(s.delta_df for s in ladder.steps[1:]) == analytic_delta_df(13, 5) == (8, 8, 13)
    assert ladder.steps[0].delta_chisq is None


def test_triad_ladder_df_pattern():
    ladder = run_ladder_stats(TRIAD, stats_of(triad_population()))
    assert [s.fit.df for s in ladder.steps] == [0, 2, 4, 7]
    assert tuple(s.delta_df for s in ladder.steps[1:]) == analytic_delta_df(3, 1)
    assert np.all(np.diff([s.fit.df for s in ladder.steps]) > 0)


def test_identical_groups_give_zero_differences():
    y = sample_arrays(five_factor_population(200, seed=5))[0]
    stats = SampleStats.from_arrays([y, y.copy()], list(five_factor_population().items))
    ladder = run_ladder_stats(FIVE, stats)
    for s in ladder.steps[1:]:
        assert abs(s.delta_chisq) < 1e-6
        assert s.p_value == pytest.approx(1.0, abs=1e-6)
    assert ladder.verdict == "invariant through strict"


def test_swapping_group_labels_leaves_statistics_unchanged():
    model = perturb(five_factor_population(120, groups=2, seed=8), 1, "residuals", 1.5)
    arrays = sample_arrays(model)
    cols = list(model.items)
    a = run_ladder_stats(FIVE, SampleStats.from_arrays(arrays, cols))
    b = run_ladder_stats(FIVE, SampleStats.from_arrays(arrays[::-1], cols))
    for sa, sb in zip(a.steps, b.steps):
        assert sa.fit.df == sb.fit.df
        assert sa.fit.chisq == pytest.approx(sb.fit.chisq, abs=1e-6)
        if sa.p_value is not None:
            assert sa.p_value == pytest.approx(sb.p_value, abs=1e-6)


def test_verdict_monotone_in_alpha():
    model = perturb(five_factor_population(85, groups=2, seed=11), 1, "residuals", 1.6)
    ladder = run_ladder_stats(FIVE, stats_of(model))
    order = {lev: i for i, lev in enumerate(ladder.levels)}
    order["invariant through strict"] = len(order)
    alphas = [1e-6, 1e-4, 0.001, 0.01, 0.05, 0.1, 0.5, 0.999]
    positions = [order[ladder.verdict_at(a)] for a in alphas]
    assert positions == sorted(positions, reverse=True)


def test_aic_bic_are_minus_two_loglik_plus_penalty():
    ladder = run_ladder_stats(TRIAD, stats_of(triad_population(90, seed=2)))
    for s in ladder.steps:
        n = sum(s.fit.n_per_group)
        assert s.aic == -2 * s.fit.loglik + 2 * s.fit.n_free
        assert s.bic == -2 * s.fit.loglik + s.fit.n_free * math.log(n)
        assert s.fit.n_free == s.fit.table.n_free


def test_strict_step_detects_residual_violation():
    model = perturb(five_factor_population(400, groups=2, seed=4), 1, "residuals", 2.0)
    ladder = run_ladder_stats(FIVE, stats_of(model))
    assert ladder.step("strict").p_value < 1e-6
    assert ladder.verdict == "strict"


def test_run_ladder_from_dataset_and_degenerate_grouping():
    model = triad_population(60, seed=1)
    data = sample(model)
    ladder = run_ladder(TRIAD, data, grouping_of(data))
    assert ladder.group_labels == ("g1", "g2")
    assert ladder.n_per_group == (60, 60)
    one = GroupAssignment(labels=("g1",) * data.n, rule="one", levels=("g1",))
    with pytest.raises(DegenerateGroupingError):
        run_ladder(TRIAD, data, one)
    tiny = GroupAssignment(labels=("g1",) * (data.n - 1) + ("g2",), rule="tiny", levels=("g1", "g2"))
    with pytest.raises(DegenerateGroupingError):
        run_ladder(TRIAD, data, tiny)


def test_subscale_ladders_fit_triads_and_skip_pairs():
    model = five_factor_population(100, groups=2, seed=6)
    data = sample(model, instruments=(hate_speech_instrument(),))
    out = run_subscale_ladders(hate_speech_instrument(), FIVE, data, grouping_of(data))
    assert len(out) == 5
    kinds = [type(o) for o in out]
    assert kinds == [InvarianceLadder, InvarianceLadder, SkippedSubscale, SkippedSubscale, InvarianceLadder]
    for lad in (out[0], out[1], out[4]):
        assert [s.fit.df for s in lad.steps] == [0, 2, 4, 7]
    assert out[0].name == "Violence (Violence tendency)"
    assert "under-identified" in out[2].notice and "df = -2" in out[2].notice
    threaded = run_subscale_ladders(hate_speech_instrument(), FIVE, data, grouping_of(data), threads=4)
    assert [o.to_dict() for o in threaded] == [o.to_dict() for o in out]


def test_nonconverged_level_is_flagged():
    ladder = run_ladder_stats(TRIAD, stats_of(triad_population(80)))
    bad = replace(ladder.steps[2], fit=replace(ladder.steps[2].fit, converged=False))
    flagged = replace(ladder, steps=ladder.steps[:2] + (bad,) + ladder.steps[3:])
    assert flagged.flagged == ["strong"]
    assert ladder.flagged == []


def test_report_layout_bytes():
    ladder = run_ladder_stats(FIVE, stats_of(five_factor_population(85, groups=2, seed=3)))
    text = invariance_report(ladder)
    lines = text.split("\n")
    assert lines[0] == "\tDF\tAIC\tBIC\tChisq\tChisq diff\tDF diff\tPr(>Chisq)"
    assert "\t".join(HEADER) == lines[0]
    assert [ln.split("\t")[0] for ln in lines[1:5]] == ["Configural", "Weak", "Strong", "Strict"]
    conf = lines[1].split("\t")
    assert len(conf) == 8 and conf[5:] == ["", "", ""]
    assert lines[1].endswith("\t\t\t")
    for ln, s in zip(lines[1:5], ladder.steps):
        cells = ln.split("\t")
        assert cells[1] == str(s.fit.df)
        assert cells[2] == f"{s.aic:.1f}" and cells[3] == f"{s.bic:.1f}"
        assert cells[4] == f"{s.fit.chisq:.4f}"
    assert lines[5] == ""
    assert lines[6] == SIGNIF_LEGEND == "Signif. codes: 0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1"
    assert text.endswith(SIGNIF_LEGEND + "\n")
    titled = invariance_report(ladder, "Age groups")
    assert titled == "Age groups\n\n" + text


@pytest.mark.parametrize(
    "p, cell",
    [
        (3.078e-05, "3.078e-05 ***"),
        (0.01454, "0.01454 *"),
        (0.0878904, "0.08789 ."),
        (0.003394, "0.003394 **"),
        (0.5, "0.5000"),
    ],
)
def test_report_pvalue_cells(p, cell):
    base = run_ladder_stats(TRIAD, stats_of(triad_population(85)))
    s = base.steps[1]
    ladder = replace(base, steps=(base.steps[0], replace(s, p_value=p)) + base.steps[2:])
    row = invariance_report(ladder).split("\n")[2].split("\t")
    assert row[7] == cell


def test_to_dict_matches_steps():
    ladder = run_ladder_stats(TRIAD, stats_of(triad_population(70, seed=9)))
    doc = ladder.to_dict()
    assert [lv["level"] for lv in doc["levels"]] == list(ladder.levels)
    assert [lv["df"] for lv in doc["levels"]] == [0, 2, 4, 7]
    assert doc["levels"][0]["chisq_diff"] is None
    assert doc["verdict"] == ladder.verdict
