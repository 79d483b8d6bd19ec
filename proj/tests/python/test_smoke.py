import math

import numpy as np
import pytest

import latentrem

SCENARIO = {"nodes": 6, "intervals": 15, "dim": 2, "mean_rate": 2.0, "seed": 3}


@pytest.fixture(scope="module")
def sim():
    return latentrem.simulate(SCENARIO)


@pytest.fixture(scope="module")
def fitted(sim):
    return latentrem.fit(sim.panel, {"dim": 2})


def test_simulate_shapes(sim):
    assert sim.panel.nodes == 6
    assert sim.panel.intervals == 15
    assert sim.panel.counts.shape == (15, len(sim.panel.dyads))
    assert sim.truth.shape == (16, 12)
    again = latentrem.simulate(SCENARIO)
    assert np.array_equal(sim.panel.counts, again.panel.counts)


def test_fit_and_criteria(sim, fitted):
    assert fitted.means.shape == (16, 12)
    assert np.all(fitted.variances >= 0)
    assert fitted.iterations >= 1
    ic = latentrem.caic(fitted, sim.panel)
    assert math.isclose(ic["caic"], -2 * ic["log_likelihood"] + 2 * (ic["regression_df"] + ic["latent_df"]), rel_tol=1e-12)
    k = latentrem.kl(fitted, sim, SCENARIO, seed=5)
    assert math.isfinite(k["value"]) and k["terms"] == 15 * 15
    assert latentrem.distance_correlation(fitted, sim) > 0.5


def test_static_fit(sim):
    st = latentrem.fit(sim.panel, {"dim": 2}, static=True)
    assert st.static_model
    assert np.allclose(st.means[1], st.means[-1])


def test_ingest_round_trip(sim, tmp_path):
    path = tmp_path / "events.csv"
    sim.panel.write_events(str(path))
    back = latentrem.ingest(path, directed=False, start=1.0, width=1.0, count=15)
    assert np.array_equal(back.counts, sim.panel.counts)


def test_errors_carry_codes(tmp_path):
    with pytest.raises(latentrem.LatentremError) as info:
        latentrem.ingest(tmp_path / "missing.csv")
    assert info.value.code == "io"
