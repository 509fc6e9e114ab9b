import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from normsim import BeliefMatrix, CommunityParams, SocialNorm, belief_update, updated_row


def make_norm(h=2, L=3):
    params = CommunityParams(N=10, L=L, b=3.0, c=1.0, delta=0.5)
    return SocialNorm(params=params, h=h)


def test_compliant_initialization():
    norm = make_norm(h=2)
    O = BeliefMatrix.compliant(norm)
    expected = np.zeros((4, 5))
    expected[0, 0] = expected[1, 0] = 1.0  # bad opponents serve everyone
    expected[2, 2] = expected[3, 2] = 1.0  # good opponents serve the good
    assert np.array_equal(O.rows, expected)
    assert O.counts.sum() == 0


def test_uniform_initialization_rows_sum_to_one():
    O = BeliefMatrix.uniform(3)
    assert np.allclose(O.rows.sum(axis=1), 1.0)


def test_malformed_rows_rejected():
    with pytest.raises(ValueError):
        BeliefMatrix(rows=np.ones((4, 5)))  # rows sum to 5
    with pytest.raises(ValueError):
        BeliefMatrix(rows=np.full((4, 4), 0.25))  # wrong shape


def test_update_served_splits_mass_over_low_thresholds():
    # first observation, prior all mass on threshold 0, served at own rep 1
    row = np.array([1.0, 0, 0, 0, 0])
    out = updated_row(row, own_rep=1, observed_z=1, t=1)
    assert np.allclose(out, [0.5, 0.5, 0, 0, 0])


def test_update_refused_puts_mass_on_single_upper_threshold():
    # refusal at the top reputation: only threshold L+1 explains it
    row = np.array([0.2, 0.2, 0.2, 0.2, 0.2])
    out = updated_row(row, own_rep=3, observed_z=0, t=1)
    assert np.allclose(out, [0, 0, 0, 0, 1.0])


def test_update_running_average_weights():
    row = np.array([1.0, 0, 0, 0, 0])
    out = updated_row(row, own_rep=0, observed_z=0, t=4)
    # prior keeps weight 3/4, increment spreads 1/4 over thresholds 1..4
    assert np.allclose(out, [0.75, 0.0625, 0.0625, 0.0625, 0.0625])


def test_update_validates_inputs():
    row = np.array([1.0, 0, 0, 0, 0])
    with pytest.raises(ValueError):
        updated_row(row, own_rep=0, observed_z=2, t=1)
    with pytest.raises(ValueError):
        updated_row(row, own_rep=4, observed_z=1, t=1)
    with pytest.raises(ValueError):
        updated_row(row, own_rep=0, observed_z=1, t=0)


@settings(max_examples=300, deadline=None)
@given(
    data=st.data(),
    own_rep=st.integers(min_value=0, max_value=3),
    z=st.integers(min_value=0, max_value=1),
    t=st.integers(min_value=1, max_value=10_000),
)
def test_rows_stay_stochastic_under_fuzz(data, own_rep, z, t):
    raw = np.array(
        data.draw(
            st.lists(
                st.floats(min_value=0.0, max_value=1.0), min_size=5, max_size=5
            )
        )
    )
    if raw.sum() == 0:
        raw[0] = 1.0
    row = raw / raw.sum()
    out = updated_row(row, own_rep=own_rep, observed_z=z, t=t)
    assert abs(out.sum() - 1.0) < 1e-9
    assert (out >= -1e-12).all()


def test_observe_tracks_per_row_counters():
    norm = make_norm(h=1)
    O = BeliefMatrix.compliant(norm)
    O.observe(server_rep=2, own_rep=1, observed_z=1)
    O.observe(server_rep=2, own_rep=1, observed_z=1)
    O.observe(server_rep=0, own_rep=3, observed_z=0)
    assert list(O.counts) == [1, 0, 2, 0]
    assert np.allclose(O.rows.sum(axis=1), 1.0)


def test_belief_update_is_pure():
    norm = make_norm(h=1)
    O = BeliefMatrix.compliant(norm)
    before = O.rows.copy()
    O2 = belief_update(O, server_rep=1, own_rep=2, observed_z=0, t=1)
    assert np.array_equal(O.rows, before)
    assert not np.array_equal(O2.rows, before)
    assert O2.counts[1] == 1


def test_long_observation_sequence_stays_stochastic():
    rng = np.random.default_rng(0)
    norm = make_norm(h=2)
    O = BeliefMatrix.compliant(norm)
    for _ in range(1000):
        O.observe(
            server_rep=int(rng.integers(4)),
            own_rep=int(rng.integers(4)),
            observed_z=int(rng.integers(2)),
        )
    assert np.abs(O.rows.sum(axis=1) - 1.0).max() < 1e-9
