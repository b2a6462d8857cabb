"""Named adversary scenarios for reduction checks.

A scenario pairs a small protocol with an adversary policy.  Besides the
bundled table, scenarios can be read from flat ``key = value`` files with
the keys of :class:`Scenario` (lists comma separated).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace

from . import adversary as adv
from .normalform import quantize
from .protocols import demos

PROTOCOLS = {
    "leader-coin": demos.leader_coin,
    "early-stop": demos.early_stop,
    "relay-coin": demos.relay_coin,
    "echo-all": demos.echo_all,
}


def _policy(name: str, n: int, t: int, prm: dict):
    if name == "empty":
        return adv.EmptyPolicy(t)
    if name == "leader-crash":
        return adv.LeaderCrash(n, t)
    if name == "crash-deliver":
        return adv.CrashDeliverSubset(n, t, prm.get("target", 1), prm.get("at", 2),
                                      prm.get("deliver_to", [n - 1]))
    if name == "adaptive":
        return adv.AdaptiveOnDecision(n, t, prm.get("at", 3), prm.get("if_decided", 0),
                                      prm.get("otherwise", 2))
    if name == "idle":
        return adv.ByzantinePolicy(t)
    if name == "flip":
        return adv.FlipForwarder(n, t, prm.get("target", n - 1), prm.get("at", 2), prm.get("watch", 0))
    if name == "hadamard":
        return adv.HadamardForwarder(n, t, prm.get("target", n - 1), prm.get("victim", 0),
                                     prm.get("at", 2))
    raise KeyError(f"unknown policy {name!r}")


POLICIES = ("empty", "leader-crash", "crash-deliver", "adaptive", "idle", "flip", "hadamard")


@dataclass(frozen=True)
class Scenario:
    name: str
    protocol: str
    policy: str
    n: int
    t: int
    description: str = ""
    inputs: tuple = ()
    params: dict = field(default_factory=dict)

    def build(self):
        """Returns (quantized protocol, policy, inputs)."""
        if self.protocol not in PROTOCOLS:
            raise KeyError(f"unknown protocol {self.protocol!r}")
        q = quantize(PROTOCOLS[self.protocol](self.n))
        inputs = list(self.inputs) or [0] * self.n
        return q, _policy(self.policy, self.n, self.t, dict(self.params)), inputs

    @property
    def kind(self) -> str:
        return "byzantine" if self.policy in ("idle", "flip", "hadamard") else "failstop"


BUNDLED = {s.name: s for s in [
    Scenario("failstop-empty-n3", "leader-coin", "empty", 3, 1,
             "leader coin, no corruption"),
    Scenario("failstop-leadercrash-n3", "leader-coin", "leader-crash", 3, 1,
             "leader coin; crash the most likely leader in round 2, deliver to one player"),
    Scenario("failstop-crash-partial-n3", "leader-coin", "crash-deliver", 3, 1,
             "leader coin; crash player 1 in round 2, deliver only to player 2",
             params={"target": 1, "at": 2, "deliver_to": [2]}),
    Scenario("failstop-adaptive-n3", "early-stop", "adaptive", 3, 1,
             "early-stop exchange; crash chosen by whether player 0 already decided",
             params={"at": 3, "if_decided": 0, "otherwise": 2}),
    Scenario("byz-idle-n4", "relay-coin", "idle", 4, 1,
             "relay coin, Byzantine adversary that corrupts nobody"),
    Scenario("byz-flip-n4", "relay-coin", "flip", 4, 1,
             "relay coin; player 3 flips its coin message, then forwards a flipped relay",
             params={"target": 3}),
    Scenario("byz-hadamard-n4", "relay-coin", "hadamard", 4, 1,
             "relay coin; player 3 applies H to its message for player 0",
             params={"target": 3, "victim": 0}),
]}


_INT_KEYS = {"n", "t", "target", "at", "watch", "victim", "if_decided", "otherwise"}
_LIST_KEYS = {"inputs", "deliver_to"}


class ScenarioError(ValueError):
    pass


def load_scenario_file(path) -> Scenario:
    text = open(path, encoding="utf-8").read()
    cp = configparser.ConfigParser()
    try:
        cp.read_string("[scenario]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ScenarioError(str(exc)) from exc
    sec = dict(cp["scenario"])
    lines = {ln.split("=", 1)[0].strip(): k + 1 for k, ln in enumerate(text.splitlines()) if "=" in ln}
    try:
        name, protocol, policy = sec.pop("name"), sec.pop("protocol"), sec.pop("policy")
    except KeyError as exc:
        raise ScenarioError(f"{path}: missing key {exc.args[0]}") from exc
    if protocol not in PROTOCOLS:
        raise ScenarioError(f"{path}:{lines.get('protocol')}: unknown protocol {protocol!r}")
    if policy not in POLICIES:
        raise ScenarioError(f"{path}:{lines.get('policy')}: unknown policy {policy!r}")
    desc = sec.pop("description", "")
    prm: dict = {}
    for k, v in sec.items():
        try:
            if k in _INT_KEYS:
                prm[k] = int(v)
            elif k in _LIST_KEYS:
                prm[k] = [int(x) for x in v.split(",") if x.strip()]
            else:
                raise ScenarioError(f"{path}:{lines.get(k)}: unknown key {k!r}")
        except ValueError as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"{path}:{lines.get(k)}: bad value for {k!r}: {v!r}") from exc
    n = prm.pop("n", 3)
    t = prm.pop("t", 1)
    inputs = tuple(prm.pop("inputs", []))
    if inputs and len(inputs) != n:
        raise ScenarioError(f"{path}:{lines.get('inputs')}: expected {n} inputs")
    return Scenario(name, protocol, policy, n, t, desc, inputs, prm)


def get(name: str) -> Scenario:
    if name not in BUNDLED:
        raise KeyError(name)
    return BUNDLED[name]


def names() -> list[str]:
    return sorted(BUNDLED)


def with_inputs(s: Scenario, inputs) -> Scenario:
    return replace(s, inputs=tuple(inputs))
