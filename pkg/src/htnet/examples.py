"""Built-in example networks."""
from __future__ import annotations

import numpy as np

from .model import NetworkModel, NetworkSpec, ScalingScheme

EXP = "exponential"


class UnknownExample(KeyError):
    pass


def _single() -> NetworkModel:
    spec = NetworkSpec(C=[[1]], A=[[1]], routing=[[1, 0]], arrival_classes=(0,), name="single")
    sc = ScalingScheme(alpha=[1], beta=[1], theta1=[-1], theta2=[0], q=[1], arrival_family=(EXP,), service_family=(EXP,))
    return NetworkModel(spec, sc)


def _tandem() -> NetworkModel:
    # activity 1 feeds buffer 2, activity 2 exits
    spec = NetworkSpec(C=np.eye(2), A=np.eye(2), routing=[[0, 0, 1], [1, 0, 0]], arrival_classes=(0,), name="tandem")
    sc = ScalingScheme(alpha=[1, 0], beta=[1, 1], theta1=[-1, 0], theta2=[0, 0], q=[1, 1],
                       arrival_family=(EXP, EXP), service_family=(EXP, EXP))
    return NetworkModel(spec, sc)


def _n_network() -> NetworkModel:
    # server 1 serves buffer 1; server 2 serves both buffers
    spec = NetworkSpec(C=[[1, 1, 0], [0, 0, 1]], A=[[1, 0, 0], [0, 1, 1]], routing=[[1, 0, 0]] * 3,
                       arrival_classes=(0, 1), name="n_network")
    sc = ScalingScheme(alpha=[1.5, 0.5], beta=[1, 1, 1], theta1=[-0.5, -0.5], theta2=[0, 0, 0], q=[1, 1],
                       arrival_family=(EXP, EXP), service_family=(EXP,) * 3)
    return NetworkModel(spec, sc, workload=(np.array([[1.0, 1.0]]), np.array([[1.0, 1.0]])))


def _jobshop_fig3() -> NetworkModel:
    # Three buffers, each processed by two activities on different servers with
    # identical routing: 1 -> 2 -> 3, then back to 1 w.p. 0.2, to 2 w.p. 0.1.
    C = [[1, 1, 0, 0, 0, 0], [0, 0, 1, 1, 0, 0], [0, 0, 0, 0, 1, 1]]
    A = [[1, 0, 0, 0, 1, 0], [0, 1, 1, 0, 0, 0], [0, 0, 0, 1, 0, 1]]
    routing = [[0, 0, 1, 0], [0, 0, 1, 0], [0, 0, 0, 1], [0, 0, 0, 1], [0.7, 0.2, 0.1, 0], [0.7, 0.2, 0.1, 0]]
    spec = NetworkSpec(C=C, A=A, routing=routing, arrival_classes=(0,), name="jobshop_fig3")
    sc = ScalingScheme(alpha=[0.7, 0, 0], beta=[0.5, 0.5, 0.5, 1.5, 0.5, 2.5], theta1=[-0.7, 0, 0],
                       theta2=np.zeros(6), q=[1, 1, 1], arrival_family=(EXP,) * 3, service_family=(EXP,) * 6)
    return NetworkModel(spec, sc)


EXAMPLES = {
    "single": _single,
    "tandem": _tandem,
    "n_network": _n_network,
    "jobshop_fig3": _jobshop_fig3,
}


def example_names() -> list:
    return list(EXAMPLES)


def load_example(name: str) -> NetworkModel:
    """The named network as a model (spec, scaling scheme and any workload matrices)."""
    try:
        return EXAMPLES[name]()
    except KeyError:
        raise UnknownExample(f"unknown example {name!r}; choose from {', '.join(EXAMPLES)}") from None
