import numpy as np
import pytest

from hvacdfl.plant import default_plant, generate_pretraining_dataset
from hvacdfl.scenarios import default_scenario, generate_weather_year
from hvacdfl.thermal import RcThermalModel, build_nn_model
from hvacdfl.training import pretrain_ito


@pytest.fixture(scope="session")
def weather_year():
    return generate_weather_year(7)


@pytest.fixture(scope="session")
def plant():
    return default_plant()


@pytest.fixture(scope="session")
def pretrain_data(plant, weather_year):
    return generate_pretraining_dataset(plant, weather_year, lambda p: default_scenario(p))


@pytest.fixture(scope="session")
def nn1_pretrained(pretrain_data):
    model = build_nn_model(5, [2], np.random.default_rng(0))
    model, _ = pretrain_ito(model, pretrain_data, epochs=30, seed=1)
    return model


@pytest.fixture(scope="session")
def rc_pretrained(pretrain_data):
    model = RcThermalModel(np.full(5, 4.0), np.full(5, 3.0), np.full(5, 2.5), np.full(5, 2.5), 1.0)
    model, _ = pretrain_ito(model, pretrain_data, epochs=30, seed=1)
    return model


@pytest.fixture()
def winter_day(weather_year):
    return default_scenario(weather_year.profiles[30])


@pytest.fixture()
def short_day(weather_year):
    # 6 four-hour steps keep MIQP tests quick
    return default_scenario(weather_year.profiles[30][::4])


def credible_nn(hidden, seed, zones=5, weight_scale=0.8):
    """Random network whose outputs stay in a plausible indoor-temperature
    range, so schedule instances are feasible."""
    rng = np.random.default_rng(seed)
    return build_nn_model(
        zones, hidden, rng,
        input_mean=np.r_[np.full(zones, 21.0), np.zeros(zones), [10.0]],
        input_scale=np.r_[np.full(zones, 8.0), np.full(zones, 4.0), [15.0]],
        output_mean=np.full(zones, 21.0),
        output_scale=np.full(zones, 2.0),
        weight_scale=weight_scale,
    )
