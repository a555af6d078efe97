import numpy as np
import pytest

from fairbench.dataset import (
    CLINICAL_COLUMNS,
    CSV_HEADER,
    NUMERIC_FIELDS,
    MOMENT_TOLERANCE,
    Cohort,
    PatientRecord,
    StatBlock,
    age_bin_labels,
    apply_minmax,
    bin_age,
    encode_features,
    fit_minmax,
    load_cohort_csv,
    stratified_kfold,
    subset_cohort,
    synthesize_cohort,
    write_cohort_csv,
)
from fairbench.errors import (
    DimensionMismatch,
    EmptyCohort,
    InfeasibleSpec,
    InvariantViolation,
    MissingColumn,
    TooFewSamples,
    UnexpectedColumn,
    UnparsableValue,
)
from fairbench.specfile import cohort_spec_from_dict, default_cohort_spec


def make_record(label="ITP", plt=10.0, age=60.0, gender="F", race="White", **over):
    kwargs = dict(
        diagnosis_year=2010,
        age_last_seen=age,
        alt=20.0,
        dx_hb_ct=140.0,
        dx_neutro_ct=5.0,
        wbc_ct=8.0,
        rbc_ct=4.5,
        dx_plt_ct=plt,
        gender=gender,
        race=race,
        label=label,
    )
    kwargs.update(over)
    return PatientRecord(**kwargs)


def make_cohort(n_itp, n_non):
    recs = [make_record("ITP", plt=5.0 + i) for i in range(n_itp)]
    recs += [make_record("NonITP", plt=200.0 + i) for i in range(n_non)]
    return Cohort(records=tuple(recs), source="test")


# ---------------------------------------------------------------------------
# records and CSV round trip
# ---------------------------------------------------------------------------


def test_record_rejects_negative_numeric():
    with pytest.raises(InvariantViolation):
        make_record(plt=-1.0)


def test_record_rejects_zero_age():
    with pytest.raises(InvariantViolation):
        make_record(age=0.0)


def test_record_rejects_ancient_year():
    with pytest.raises(InvariantViolation):
        make_record(diagnosis_year=1850)


def test_cohort_counts_match_tally():
    c = make_cohort(3, 2)
    assert (c.n_itp, c.n_non_itp) == (3, 2)
    assert c.labels().tolist() == [1, 1, 1, 0, 0]


def test_round_trip_synthetic_csv(tmp_path):
    cohort = synthesize_cohort(default_cohort_spec(), seed=42)
    assert (cohort.n_itp, cohort.n_non_itp) == (100, 50)
    path = write_cohort_csv(cohort, tmp_path / "cohort.csv")
    loaded = load_cohort_csv(path)
    assert loaded.records == cohort.records
    assert (loaded.n_itp, loaded.n_non_itp) == (100, 50)


def test_load_rejects_negative_platelets(tmp_path):
    path = tmp_path / "bad.csv"
    rows = [",".join(CSV_HEADER)]
    rows += ["2010,60,20,140,5,8,4.5,-3,F,White,ITP"] * 2
    rows += ["2010,60,20,140,5,8,4.5,250,M,Black,NonITP"] * 2
    path.write_text("\n".join(rows) + "\n")
    with pytest.raises(InvariantViolation, match="row 1"):
        load_cohort_csv(path)


def test_load_rejects_missing_race_column(tmp_path):
    path = tmp_path / "bad.csv"
    header = [h for h in CSV_HEADER if h != "race"]
    path.write_text(",".join(header) + "\n2010,60,20,140,5,8,4.5,10,F,ITP\n")
    with pytest.raises(MissingColumn, match="race"):
        load_cohort_csv(path)


def test_load_rejects_extra_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(",".join(CSV_HEADER + ("oops",)) + "\n")
    with pytest.raises(UnexpectedColumn, match="oops"):
        load_cohort_csv(path)


def test_load_rejects_unparsable_value(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(
        ",".join(CSV_HEADER) + "\n2010,sixty,20,140,5,8,4.5,10,F,White,ITP\n"
    )
    with pytest.raises(UnparsableValue, match="age_last_seen"):
        load_cohort_csv(path)


def test_load_rejects_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text(",".join(CSV_HEADER) + "\n")
    with pytest.raises(EmptyCohort):
        load_cohort_csv(path)


def test_load_accepts_spelled_out_gender(tmp_path):
    path = tmp_path / "ok.csv"
    rows = [",".join(CSV_HEADER)]
    rows += ["2010,60,20,140,5,8,4.5,10,Female,White,ITP"] * 2
    rows += ["2010,60,20,140,5,8,4.5,250,Male,Black,NonITP"] * 2
    path.write_text("\n".join(rows) + "\n")
    cohort = load_cohort_csv(path)
    assert {r.gender for r in cohort.records} == {"F", "M"}


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------


def test_synthesize_deterministic():
    spec = default_cohort_spec()
    a = synthesize_cohort(spec, 7)
    b = synthesize_cohort(spec, 7)
    assert a.records == b.records
    c = synthesize_cohort(spec, 8)
    assert c.records != a.records


def test_synthesize_samples_within_ranges():
    spec = default_cohort_spec()
    cohort = synthesize_cohort(spec, 3)
    for cls_spec, label in ((spec.itp, "ITP"), (spec.non_itp, "NonITP")):
        recs = [r for r in cohort.records if r.label == label]
        for name in NUMERIC_FIELDS:
            block = cls_spec.variables[name]
            values = [getattr(r, name) for r in recs]
            assert min(values) >= block.lo and max(values) <= block.hi


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4, 42, 1234])
def test_synthesize_moments_within_tolerance(seed):
    spec = default_cohort_spec()
    cohort = synthesize_cohort(spec, seed)
    for cls_spec, label in ((spec.itp, "ITP"), (spec.non_itp, "NonITP")):
        recs = [r for r in cohort.records if r.label == label]
        for name in NUMERIC_FIELDS:
            block = cls_spec.variables[name]
            tol = MOMENT_TOLERANCE * (block.hi - block.lo)
            values = np.array([getattr(r, name) for r in recs], dtype=float)
            if block.mean is not None:
                assert abs(values.mean() - block.mean) <= tol, (label, name, "mean")
            if block.median is not None:
                assert abs(np.median(values) - block.median) <= tol, (label, name, "median")


def test_synthesize_platelet_gap_always_separates_classes():
    spec = default_cohort_spec()
    for seed in range(10):
        cohort = synthesize_cohort(spec, seed)
        itp = [r.dx_plt_ct for r in cohort.records if r.label == "ITP"]
        non = [r.dx_plt_ct for r in cohort.records if r.label == "NonITP"]
        assert max(itp) < min(non)


def test_synthesize_gender_allocation_is_exact():
    cohort = synthesize_cohort(default_cohort_spec(), 11)
    itp_male = sum(1 for r in cohort.records if r.label == "ITP" and r.gender == "M")
    non_male = sum(1 for r in cohort.records if r.label == "NonITP" and r.gender == "M")
    assert itp_male == 53
    assert non_male == 29


def _spec_dict_with(itp_over=None, non_over=None):
    base = {
        "size": 50,
        "gender": {"M": 0.5, "F": 0.5},
        "race": {"White": 0.5, "Black": 0.2, "Asian": 0.2, "Other": 0.1},
        "variables": {
            name: {"min": 1.0, "max": 9.0, "median": 4.0, "mean": 4.0}
            for name in NUMERIC_FIELDS
        },
    }
    import copy

    itp = copy.deepcopy(base)
    non = copy.deepcopy(base)
    for target, over in ((itp, itp_over), (non, non_over)):
        if over:
            target["variables"].update(over)
    itp["variables"]["diagnosis_year"] = {"min": 2000, "max": 2020}
    non["variables"]["diagnosis_year"] = {"min": 2000, "max": 2020}
    return {"classes": {"ITP": itp, "NonITP": non}}


def test_synthesize_constant_variable():
    doc = _spec_dict_with(itp_over={"alt": {"min": 3.0, "max": 3.0}})
    spec = cohort_spec_from_dict(doc)
    cohort = synthesize_cohort(spec, 5)
    assert all(r.alt == 3.0 for r in cohort.records if r.label == "ITP")


def test_synthesize_infeasible_mean_at_boundary():
    doc = _spec_dict_with(itp_over={"alt": {"min": 1.0, "max": 9.0, "median": 1.0, "mean": 1.0}})
    spec = cohort_spec_from_dict(doc)
    with pytest.raises(InfeasibleSpec):
        synthesize_cohort(spec, 5)


def test_synthesize_infeasible_contradictory_moments():
    # mean pinned near the bottom, median pinned at the top of the range
    doc = _spec_dict_with(itp_over={"alt": {"min": 0.0, "max": 10.0, "median": 9.5, "mean": 2.0}})
    spec = cohort_spec_from_dict(doc)
    with pytest.raises(InfeasibleSpec):
        synthesize_cohort(spec, 5)


def test_synthesize_spends_mean_budget_to_reach_median():
    # mean at the range centre with an off-centre median is only reachable by
    # letting the sample mean drift inside its own tolerance
    doc = _spec_dict_with(itp_over={"alt": {"min": 1.0, "max": 9.0, "median": 4.0, "mean": 5.0}})
    spec = cohort_spec_from_dict(doc)
    for seed in (0, 1, 2):
        cohort = synthesize_cohort(spec, seed)
        alts = np.array([r.alt for r in cohort.records if r.label == "ITP"])
        assert abs(alts.mean() - 5.0) <= 0.8
        assert abs(np.median(alts) - 4.0) <= 0.8


def test_stat_block_rejects_moment_outside_range():
    with pytest.raises(InvariantViolation):
        StatBlock(lo=0.0, hi=1.0, median=2.0)


# ---------------------------------------------------------------------------
# stratified folds
# ---------------------------------------------------------------------------


def test_kfold_exact_counts_on_divisible_cohort():
    c = make_cohort(100, 50)
    labels = c.labels()
    for train, test in stratified_kfold(c, 5, seed=9):
        assert labels[test].sum() == 20
        assert len(test) - labels[test].sum() == 10
        assert len(train) == 120


def test_kfold_balanced_assignment_on_uneven_cohort():
    # 7 + 5 split over k=5: ITP per fold in {1, 2} with exactly two folds of 2
    c = make_cohort(7, 5)
    labels = c.labels()
    itp_counts = []
    for _, test in stratified_kfold(c, 5, seed=0):
        itp = int(labels[test].sum())
        non = len(test) - itp
        itp_counts.append(itp)
        assert non == 1
        assert itp in (1, 2)
    assert sorted(itp_counts) == [1, 1, 1, 2, 2]


def test_kfold_rejects_small_class():
    c = make_cohort(4, 10)
    with pytest.raises(TooFewSamples):
        stratified_kfold(c, 5, seed=0)
    with pytest.raises(TooFewSamples):
        stratified_kfold(c, 1, seed=0)


def test_kfold_partition_and_determinism():
    rng = np.random.default_rng(77)
    for _ in range(25):
        n_itp = int(rng.integers(3, 30))
        n_non = int(rng.integers(3, 30))
        k = int(rng.integers(2, 1 + min(5, n_itp, n_non)))
        c = make_cohort(n_itp, n_non)
        seed = int(rng.integers(0, 2**32))
        folds = stratified_kfold(c, k, seed)
        again = stratified_kfold(c, k, seed)
        assert all(
            np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
            for a, b in zip(folds, again)
        )
        all_test = np.concatenate([test for _, test in folds])
        assert sorted(all_test.tolist()) == list(range(len(c)))
        labels = c.labels()
        for train, test in folds:
            assert np.intersect1d(train, test).size == 0
            for cls, n_cls in ((1, n_itp), (0, n_non)):
                got = int(np.sum(labels[test] == cls))
                assert abs(got - n_cls / k) <= 1


# ---------------------------------------------------------------------------
# min-max scaling
# ---------------------------------------------------------------------------


def test_minmax_affine_map():
    m = np.array([[0.0], [5.0], [10.0]])
    scaler = fit_minmax(m)
    assert apply_minmax(scaler, m).ravel().tolist() == [0.0, 0.5, 1.0]


def test_minmax_constant_column_maps_to_zero():
    m = np.array([[3.0], [3.0], [3.0]])
    scaler = fit_minmax(m)
    assert apply_minmax(scaler, m).ravel().tolist() == [0.0, 0.0, 0.0]


def test_minmax_clamping_of_out_of_range_values():
    scaler = fit_minmax(np.array([[0.0], [10.0]]))
    probe = np.array([[12.0]])
    assert apply_minmax(scaler, probe, clamp=False)[0, 0] == pytest.approx(1.2)
    assert apply_minmax(scaler, probe, clamp=True)[0, 0] == 1.0


def test_minmax_dimension_mismatch():
    scaler = fit_minmax(np.zeros((3, 2)))
    with pytest.raises(DimensionMismatch):
        apply_minmax(scaler, np.zeros((3, 4)))


def test_minmax_idempotent_on_fitting_split():
    rng = np.random.default_rng(2)
    m = rng.normal(size=(20, 6)) * 10
    scaled = apply_minmax(fit_minmax(m), m)
    assert np.allclose(scaled.min(axis=0), 0.0)
    assert np.allclose(scaled.max(axis=0), 1.0)


# ---------------------------------------------------------------------------
# protocol encoding
# ---------------------------------------------------------------------------


def test_encode_unaware_has_seven_clinical_columns():
    fm = encode_features(make_cohort(3, 3), "unaware")
    assert fm.column_names == CLINICAL_COLUMNS
    assert fm.n_features == 7


def test_encode_aware_has_thirteen_columns():
    fm = encode_features(make_cohort(3, 3), "aware")
    assert fm.n_features == 13
    assert fm.column_names[7] == "gender"
    assert fm.column_names[-1] == "age_last_seen"


def test_encode_one_hot_for_black_female_patient():
    c = Cohort(
        records=(
            make_record(gender="F", race="Black"),
            make_record(gender="M", race="White", label="NonITP"),
        ),
        source="test",
    )
    fm = encode_features(c, "aware", scale=False)
    row = dict(zip(fm.column_names, fm.rows[0]))
    assert row["gender"] == 0.0
    assert [row[f"race_{r}"] for r in ("white", "black", "asian", "other")] == [0, 1, 0, 0]


def test_encode_scaler_from_other_protocol_rejected():
    c = make_cohort(3, 3)
    aware_scaler = encode_features(c, "aware").scaler
    with pytest.raises(DimensionMismatch):
        encode_features(c, "unaware", scaler=aware_scaler)


def test_encode_retains_raw_sensitive_attributes():
    c = make_cohort(2, 2)
    fm = encode_features(c, "unaware")
    assert fm.sensitive.age.tolist() == [60.0] * 4
    assert set(fm.sensitive.race) == {"White"}


def test_subset_cohort_preserves_order():
    c = make_cohort(3, 3)
    sub = subset_cohort(c, [4, 1])
    assert sub.records == (c.records[4], c.records[1])


# ---------------------------------------------------------------------------
# age binning
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("age,expected", [(29, 0), (44.9, 0), (45, 1), (64.9, 1), (65, 2), (106, 2)])
def test_bin_age_half_open_bins(age, expected):
    assert bin_age(age, (45, 65)) == expected


def test_bin_age_rejects_unsorted_edges():
    with pytest.raises(InvariantViolation):
        bin_age(30, (65, 45))


def test_age_bin_labels():
    assert age_bin_labels((45, 65)) == ("<45", "45-<65", ">=65")
