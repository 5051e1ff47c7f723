import configparser

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from madcue.ensemble import (
    GROUPS,
    OBJECT_SCORE,
    PERSON_SCORE,
    QUESTION_TYPES,
    EnsembleConfig,
    EnsembleConfigError,
    attach_auxiliary,
    choose_answer,
    combination_weights,
    combine_scores,
    default_ensembles,
    ensemble_scores,
    format_ensembles,
    parse_ensembles,
    standardize_rows,
)
from madcue.pipeline import DEFAULT_CUE_MODELS
from oracles import weights_by_hand


def test_weight_examples():
    assert combination_weights(1, 0).tolist() == [1.0]
    assert combination_weights(4, 0).tolist() == [0.7, 0.1, 0.1, 0.1]
    np.testing.assert_allclose(combination_weights(2, 1), [0.1, 0.9], atol=1e-15)


@pytest.mark.parametrize("c", range(1, 11))
def test_weights_match_hand_formula_and_sum_to_one(c):
    for pref in range(c):
        w = combination_weights(c, pref)
        np.testing.assert_allclose(w, weights_by_hand(c, pref), atol=1e-15)
        assert abs(w.sum() - 1.0) <= 1e-12


def test_weight_errors():
    with pytest.raises(EnsembleConfigError, match="max 10"):
        combination_weights(11, 0)
    with pytest.raises(EnsembleConfigError):
        combination_weights(0, 0)
    with pytest.raises(EnsembleConfigError):
        combination_weights(3, 3)


def test_combine_examples():
    np.testing.assert_array_equal(combine_scores([[0.3, 0.1, 0.2, 0.4]], [1.0]), [0.3, 0.1, 0.2, 0.4])
    out = combine_scores([[1, 0, 0, 0], [0, 1, 0, 0]], [0.5, 0.5])
    np.testing.assert_array_equal(out, [0.5, 0.5, 0, 0])


def test_combine_three_cues_against_dot_products():
    s = np.array([[0.2, 0.5, -0.1, 0.3], [0.9, 0.1, 0.0, 0.4], [0.3, 0.3, 0.8, -0.2]])
    w = [0.1, 0.8, 0.1]
    expected = [sum(w[i] * s[i, j] for i in range(3)) for j in range(4)]
    np.testing.assert_allclose(combine_scores(s, w), expected, atol=1e-15)


def test_combine_dimension_mismatch():
    with pytest.raises(ValueError):
        combine_scores(np.zeros((2, 4)), [1.0])


def test_choose_answer_examples():
    assert choose_answer([0.1, 0.9, 0.2, 0.3]) == 1
    assert choose_answer([0.5, 0.5, 0.1, 0.1]) == 0
    with pytest.raises(ValueError):
        choose_answer([0.1, np.nan, 0.0, 0.0])
    with pytest.raises(ValueError):
        choose_answer([0.1, 0.2])


def test_attach_auxiliary_examples():
    c = np.array([0.3, 0.2, -0.1, 0.5])
    np.testing.assert_allclose(attach_auxiliary(c, c), c, atol=1e-15)
    np.testing.assert_allclose(attach_auxiliary([1, 0, 0, 0], [0, 1, 0, 0]), [0.9, 0.1, 0, 0])
    np.testing.assert_array_equal(attach_auxiliary(c, np.zeros(4)), 0.9 * c)
    with pytest.raises(ValueError):
        attach_auxiliary(c, [1.0, 2.0])


def test_ensemble_scores_applies_auxiliary_after_main_combination_in_order():
    cfg = EnsembleConfig("Interesting", ("a", "b"), 1, (OBJECT_SCORE, PERSON_SCORE))
    assert cfg.auxiliary == (PERSON_SCORE, OBJECT_SCORE)
    per_cue = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
    person = [0, 0, 1.0, 0]
    obj = [0, 0, 0, 1.0]
    main = 0.1 * per_cue[0] + 0.9 * per_cue[1]
    expected = 0.9 * (0.9 * main + 0.1 * np.array(person)) + 0.1 * np.array(obj)
    out = ensemble_scores(cfg, per_cue, {PERSON_SCORE: person, OBJECT_SCORE: obj})
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_standardize_option():
    s = np.array([[1.0, 2.0, 3.0, 4.0], [5.0, 5.0, 5.0, 5.0]])
    z = standardize_rows(s)
    assert z[0].mean() == pytest.approx(0) and z[0].std() == pytest.approx(1)
    assert not z[1].any()
    cfg = EnsembleConfig("Scene", ("a", "b"), 0, standardize=True)
    np.testing.assert_allclose(ensemble_scores(cfg, s), 0.9 * z[0] + 0.1 * z[1])


def test_config_validation():
    with pytest.raises(EnsembleConfigError, match="unknown question type"):
        EnsembleConfig("Weather", ("a",))
    with pytest.raises(EnsembleConfigError, match="duplicate"):
        EnsembleConfig("Scene", ("a", "a"))
    with pytest.raises(EnsembleConfigError, match="region selection"):
        EnsembleConfig("PersonAction", ("a",), auxiliary=(PERSON_SCORE,))
    with pytest.raises(EnsembleConfigError, match="unknown auxiliary"):
        EnsembleConfig("Interesting", ("a",), auxiliary=("face_score",))


def test_default_rosters():
    ens = default_ensembles()
    assert set(ens) == set(QUESTION_TYPES)
    assert ens["Scene"].cues == ("places",)
    assert ens["Future"].cues == ("places", "person_vgg", "object_vgg", "label_stack")
    assert ens["Future"].auxiliary == (PERSON_SCORE,)
    assert ens["PersonLocation"].preferred == "places"
    assert ens["ObjectAttribute"].cues == ("places", "object_vgg", "color")
    assert ens["ObjectAttribute"].preferred == "color"
    assert ens["ObjectAffordance"].preferred == "object_vgg"
    for qtype, cfg in ens.items():
        assert abs(cfg.weights.sum() - 1.0) <= 1e-12
        for cue in cfg.cues:
            assert DEFAULT_CUE_MODELS[cue].supports(qtype), (qtype, cue)
        if GROUPS[qtype] != "a":
            assert cfg.auxiliary == ()


def _parser(text):
    p = configparser.ConfigParser(interpolation=None)
    p.optionxform = str
    p.read_string(text)
    return p


def test_parse_and_format_round_trip():
    text = (
        "[ensemble.PersonAction]\ncues = places, hico\npreferred = hico\n\n"
        "[ensemble.Past]\ncues = places, label_stack\nauxiliary = object_score, person_score\n"
        "standardize = yes\n"
    )
    ens = parse_ensembles(_parser(text), DEFAULT_CUE_MODELS)
    assert ens["PersonAction"].cues == ("places", "hico")
    assert ens["PersonAction"].preferred_index == 1
    assert ens["Past"].auxiliary == (PERSON_SCORE, OBJECT_SCORE)
    assert ens["Past"].standardize
    again = parse_ensembles(_parser(format_ensembles(ens)), DEFAULT_CUE_MODELS, base={})
    assert again == ens


@pytest.mark.parametrize(
    "text, message",
    [
        ("[ensemble.Scene]\ncues = places, sonar\n", "unknown cue model\\(s\\) sonar"),
        ("[ensemble.Scene]\ncues = places\npreferred = hico\n", "not in cues"),
        ("[ensemble.Weather]\ncues = places\n", "unknown question type"),
        ("[ensemble.Scene]\npreferred = places\n", "'cues' is required"),
        ("[ensemble.PersonAction]\ncues = places\nauxiliary = person_score\n", "region selection"),
    ],
)
def test_parse_errors(text, message):
    with pytest.raises(EnsembleConfigError, match=message):
        parse_ensembles(_parser(text), DEFAULT_CUE_MODELS)


finite = st.floats(-1, 1, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(st.lists(finite, min_size=4, max_size=4), st.floats(0.01, 100), st.floats(-10, 10))
def test_property_choice_invariant_under_positive_affine_maps(scores, a, b):
    s = np.array(scores)
    chosen = choose_answer(s)
    t = a * s + b
    # ties created by rounding are the only way the argmax can move
    if np.sum(t == t.max()) == 1 and np.sum(s == s.max()) == 1:
        assert choose_answer(t) == chosen


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**31 - 1))
def test_property_combine_is_linear(c, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, c, 4))
    alpha, beta = rng.standard_normal(2)
    w = combination_weights(c, int(rng.integers(c)))
    lhs = combine_scores(alpha * a + beta * b, w)
    rhs = alpha * combine_scores(a, w) + beta * combine_scores(b, w)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
