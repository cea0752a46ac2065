import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcnas.search_space import (
    DIM_NAMES,
    FULL_DIMS,
    PRESET_NAMES,
    ArchitectureDescriptor,
    InvalidDescriptor,
    SpaceRestriction,
    baseline_preset,
    canonicalize,
    cardinality,
    enumerate_dimensions,
    is_valid,
    preset,
    restrict,
    sample_uniform,
    validate,
)

index_tuples = st.tuples(*(st.integers(0, len(d.options) - 1) for d in FULL_DIMS))


def test_dimensions():
    space = enumerate_dimensions()
    assert len(space.dims) == 16
    assert space.dims[0].options == ("entity_markers", "entity_tokens", "standard")
    pools = [d for d in space.dims if d.name.startswith("pool_")]
    assert len(pools) == 5 and all(d.cardinality == 5 for d in pools)


def test_cardinalities():
    # independent oracle: product of option counts written out by hand
    assert cardinality(enumerate_dimensions()) == 3 * 3 * 5**5 * 2**5 * 3 * 3**3 == 72_900_000
    expected = {
        "SS": 72_900_000,
        "SS-no_inte": 3 * 3 * 5**5 * 2**5,
        "SS-no_inte-start_pool": 3 * 3 * 2**5,
        "SS-no_inte-start_pool-no_contexts": 3 * 3 * 2**2,
        "BASELINE": 1,
    }
    assert {n: cardinality(preset(n)) for n in PRESET_NAMES} == expected
    assert expected["SS-no_inte"] == 900_000 and expected["SS-no_inte-start_pool"] == 288


def test_forced_single_option_space():
    forced = SpaceRestriction({d.name: (d.options[-1],) for d in FULL_DIMS})
    assert cardinality(restrict(enumerate_dimensions(), forced)) == 1


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(PRESET_NAMES))
def test_restriction_divides(name):
    assert cardinality(enumerate_dimensions()) % cardinality(preset(name)) == 0


def test_unknown_restriction_names():
    with pytest.raises(KeyError):
        preset("SS-nothing")
    with pytest.raises(ValueError):
        restrict(enumerate_dimensions(), SpaceRestriction({"pool_e1": ("mean_pool",)}))


def test_validate_examples():
    space = enumerate_dimensions()
    validate(baseline_preset(), space)
    empty = baseline_preset().replace(use_e1=False, use_e2=False)
    with pytest.raises(InvalidDescriptor) as err:
        validate(empty, space)
    assert err.value.reason == "empty_feature"
    idx = list(baseline_preset().indices)
    idx[DIM_NAMES.index("pool_c1")] = 7
    with pytest.raises(InvalidDescriptor) as err:
        validate(idx, space)
    assert err.value.reason == "out_of_range" and err.value.dimension == "pool_c1"


def test_restriction_violation_names_dimension():
    desc = baseline_preset().replace(inter_e1e2="dot")
    with pytest.raises(InvalidDescriptor) as err:
        validate(desc, preset("SS-no_inte"))
    assert err.value.reason == "restriction" and err.value.dimension == "inter_e1e2"


def test_interaction_alone_is_a_feature():
    desc = baseline_preset().replace(use_e1=False, use_e2=False, inter_e1e2="minus")
    assert is_valid(desc, enumerate_dimensions())


def test_sample_uniform_deterministic():
    space = enumerate_dimensions()
    assert sample_uniform(space, 11) == sample_uniform(space, 11)


def test_span_mode_frequencies():
    space = enumerate_dimensions()
    rng = random.Random(0)
    n = 10_000
    counts = [0, 0, 0]
    for _ in range(n):
        counts[sample_uniform(space, rng).indices[0]] += 1
    # the empty-feature redraw is symmetric in span_mode, so each stays at 1/3
    sigma = math.sqrt(n * (1 / 3) * (2 / 3))
    assert all(abs(c - n / 3) <= 3 * sigma for c in counts)


def test_start_pool_space_samples():
    space = preset("SS-no_inte-start_pool")
    rng = random.Random(1)
    for _ in range(200):
        d = sample_uniform(space, rng)
        assert all(d.pool_kind(s) == "start_pool" for s in ("e1", "e2", "c0", "c1", "c2"))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(PRESET_NAMES))
def test_sampler_emits_valid(seed, name):
    space = preset(name)
    validate(sample_uniform(space, seed), space)


@settings(max_examples=300, deadline=None)
@given(index_tuples)
def test_encoding_round_trips(indices):
    d = ArchitectureDescriptor(indices)
    assert ArchitectureDescriptor.from_indices(d.to_indices()) == d
    assert ArchitectureDescriptor.from_index_string(d.to_index_string()) == d
    assert ArchitectureDescriptor.from_text(d.to_text()) == d


@settings(max_examples=200, deadline=None)
@given(index_tuples)
def test_canonicalize_idempotent_and_valid(indices):
    space = enumerate_dimensions()
    d = ArchitectureDescriptor(indices)
    c = canonicalize(d, space)
    assert canonicalize(c, space) == c
    assert c.needed_segments() == d.needed_segments()
    assert is_valid(c, space) == is_valid(d, space)


def test_baseline_is_the_baseline_space():
    space = preset("BASELINE")
    assert [d.allowed for d in space.dims] == [(i,) for i in baseline_preset().indices]
    assert sample_uniform(space, 0) == baseline_preset()


def test_text_format_errors():
    with pytest.raises(InvalidDescriptor) as err:
        ArchitectureDescriptor.from_text("span_mode=entity_markers\n")
    assert err.value.dimension == "pos_emb_mode"
    text = baseline_preset().to_text().replace("pool_e1=start_pool", "pool_e1=sum_pool")
    with pytest.raises(InvalidDescriptor) as err:
        ArchitectureDescriptor.from_text(text)
    assert err.value.dimension == "pool_e1"
    with pytest.raises(InvalidDescriptor):
        ArchitectureDescriptor.from_index_string("1,2,x")
