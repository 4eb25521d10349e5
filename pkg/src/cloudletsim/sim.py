"""Discrete-event simulation: vehicles move along waypoint paths, publish
BSMs at configured rates, reassociate with cloudlets as they go, and scripted
alerts / rogue-list updates fire at set times.

The core is single-threaded and event-driven; with a fixed seed two runs
produce byte-identical event logs.  Wall-clock durations (policy, pipeline,
trip) are measured per message and land in the metrics records, never in the
event log.
"""

from __future__ import annotations

import csv
import heapq
import itertools
import json
import math
import statistics
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import data as bundled
from .alerts import AlertRuleSet, TOPIC_ROGUE
from .attributes import AttributeStore, load_config
from .broker import CloudletNetwork, shadow_topic
from .errors import ConfigError, NotMember
from .geo import GeoAssociator, Region, region_from_config
from .policy import PolicyEngine
from .registration import ENTITY_TYPES

MAX_RATE_HZ = 20
MAX_VEHICLES_PER_CLOUDLET = 50


@dataclass
class VehicleSpec:
    name: str
    vtype: str = "Vehicle"
    rate_hz: float = 1.0
    path: tuple[tuple[float, float], ...] = ()
    speed_mps: float = 10.0
    gps_rate_hz: float = 1.0
    alert_every_n: int = 0  # every n-th BSM carries alert_value; 0 = never
    alert_value: str = "Tireslip"

    def position(self, t: float) -> tuple[float, float]:
        """Constant speed along the waypoint polyline, clamped at the end."""
        if len(self.path) == 1:
            return self.path[0]
        remaining = self.speed_mps * t
        for (lat0, lon0), (lat1, lon1) in zip(self.path, self.path[1:]):
            length = _segment_meters(lat0, lon0, lat1, lon1)
            if remaining <= length or length == 0.0:
                f = 0.0 if length == 0.0 else remaining / length
                return (lat0 + (lat1 - lat0) * f, lon0 + (lon1 - lon0) * f)
            remaining -= length
        return self.path[-1]


def _segment_meters(lat0, lon0, lat1, lon1) -> float:
    from .geo import METERS_PER_DEG_LAT

    mlon = METERS_PER_DEG_LAT * math.cos(math.radians((lat0 + lat1) / 2.0))
    return math.hypot((lat1 - lat0) * METERS_PER_DEG_LAT, (lon1 - lon0) * mlon)


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 0
    duration_s: float = 10.0
    regions: list[Region] = field(default_factory=list)
    vehicles: list[VehicleSpec] = field(default_factory=list)
    admins: list[str] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)          # {time, vehicle, alert}
    rogue_updates: list[dict] = field(default_factory=list)   # {time, by, op, vehicle}
    attributes: Optional[dict] = None   # store config; bundled default when None
    policies: Optional[str] = None      # policy text; bundled default when None
    rules: Optional[dict] = None        # alert rule config; bundled default when None

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        cfg = cls()
        cfg.name = _expect(raw, "name", str, default="scenario")
        cfg.seed = _expect(raw, "seed", int, default=0)
        cfg.duration_s = float(_expect(raw, "duration_s", (int, float), default=10.0))
        if cfg.duration_s <= 0:
            raise ConfigError("duration_s", "must be positive")

        raw_regions = raw.get("regions")
        if not isinstance(raw_regions, list) or not raw_regions:
            raise ConfigError("regions", "at least one coverage region is required")
        cfg.regions = [
            region_from_config(r, f"regions[{i}]") for i, r in enumerate(raw_regions)
        ]

        raw_vehicles = raw.get("vehicles")
        if not isinstance(raw_vehicles, list) or not raw_vehicles:
            raise ConfigError("vehicles", "at least one vehicle is required")
        if len(raw_vehicles) > MAX_VEHICLES_PER_CLOUDLET * len(cfg.regions):
            raise ConfigError(
                "vehicles",
                f"{len(raw_vehicles)} vehicles exceeds "
                f"{MAX_VEHICLES_PER_CLOUDLET} per cloudlet",
            )
        names = set()
        for i, v in enumerate(raw_vehicles):
            cfg.vehicles.append(_vehicle_from_dict(v, f"vehicles[{i}]", names))

        for i, admin in enumerate(raw.get("admins", [])):
            if not isinstance(admin, str):
                raise ConfigError(f"admins[{i}]", "admin entries are names")
            cfg.admins.append(admin)

        for i, ev in enumerate(raw.get("events", [])):
            path = f"events[{i}]"
            t = ev.get("time")
            if not isinstance(t, (int, float)) or t < 0 or t > cfg.duration_s:
                raise ConfigError(f"{path}.time", "must lie within the run duration")
            if ev.get("vehicle") not in names:
                raise ConfigError(f"{path}.vehicle", f"unknown vehicle {ev.get('vehicle')!r}")
            if "alert" not in ev:
                raise ConfigError(f"{path}.alert", "missing alert value")
            cfg.events.append({"time": float(t), "vehicle": ev["vehicle"], "alert": ev["alert"]})

        for i, ru in enumerate(raw.get("rogue_updates", [])):
            path = f"rogue_updates[{i}]"
            t = ru.get("time")
            if not isinstance(t, (int, float)) or t < 0 or t > cfg.duration_s:
                raise ConfigError(f"{path}.time", "must lie within the run duration")
            if ru.get("op") not in ("ADD", "DELETE", "LIST"):
                raise ConfigError(f"{path}.op", "must be ADD, DELETE or LIST")
            if ru.get("by") not in cfg.admins:
                raise ConfigError(f"{path}.by", f"{ru.get('by')!r} is not a declared admin")
            cfg.rogue_updates.append(
                {
                    "time": float(t),
                    "op": ru["op"],
                    "vehicle": ru.get("vehicle"),
                    "by": ru["by"],
                }
            )

        cfg.attributes = raw.get("attributes")
        cfg.policies = raw.get("policies")
        cfg.rules = raw.get("rules")
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "ScenarioConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _expect(raw, key, types, default):
    value = raw.get(key, default)
    if not isinstance(value, types) or isinstance(value, bool):
        raise ConfigError(key, f"expected {types}, got {type(value).__name__}")
    return value


def _vehicle_from_dict(v: dict, path: str, names: set) -> VehicleSpec:
    name = v.get("name")
    if not isinstance(name, str) or not name:
        raise ConfigError(f"{path}.name", "vehicle name must be a non-empty string")
    if name in names:
        raise ConfigError(f"{path}.name", f"duplicate vehicle name {name!r}")
    names.add(name)
    vtype = v.get("type", "Vehicle")
    if vtype not in ENTITY_TYPES or vtype == "User":
        raise ConfigError(f"{path}.type", f"{vtype!r} is not a vehicle type")
    rate = v.get("rate_hz", 1)
    if not isinstance(rate, (int, float)) or not (1 <= rate <= MAX_RATE_HZ):
        raise ConfigError(f"{path}.rate_hz", f"must be between 1 and {MAX_RATE_HZ}")
    raw_path = v.get("path")
    if not isinstance(raw_path, list) or not raw_path:
        raise ConfigError(f"{path}.path", "a list of [lat, lon] waypoints is required")
    try:
        waypoints = tuple((float(lat), float(lon)) for lat, lon in raw_path)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}.path", "waypoints must be [lat, lon] pairs") from None
    speed = float(v.get("speed_mps", 10.0))
    if speed < 0:
        raise ConfigError(f"{path}.speed_mps", "must be non-negative")
    alert_every = int(v.get("alert_every_n", 0))
    if alert_every < 0:
        raise ConfigError(f"{path}.alert_every_n", "must be >= 0")
    return VehicleSpec(
        name=name,
        vtype=vtype,
        rate_hz=float(rate),
        path=waypoints,
        speed_mps=speed,
        gps_rate_hz=float(v.get("gps_rate_hz", 1.0)),
        alert_every_n=alert_every,
        alert_value=v.get("alert_value", "Tireslip"),
    )


# --- world assembly -----------------------------------------------------------------


def build_network(cfg: ScenarioConfig) -> tuple[CloudletNetwork, GeoAssociator]:
    store = AttributeStore()
    attr_config = cfg.attributes or json.loads(bundled.text("attributes.json"))
    load_config(store, attr_config)
    engine = PolicyEngine(store)
    engine.load_text(cfg.policies if cfg.policies is not None else bundled.text("policies.policy"))
    rules = (
        AlertRuleSet.from_config(cfg.rules)
        if cfg.rules is not None
        else AlertRuleSet.from_config(json.loads(bundled.text("rules.json")))
    )
    network = CloudletNetwork(store, engine, rules=rules)
    for region in cfg.regions:
        if region.cloudlet not in network.cloudlets:
            network.create_cloudlet(region.cloudlet)
    geo = GeoAssociator(
        cfg.regions,
        on_join=lambda v, tc: network.cloudlet(tc).join(v),
        on_leave=lambda v, tc: network.cloudlet(tc).leave(v),
    )
    return network, geo


# --- the event loop -------------------------------------------------------------------


@dataclass
class MessageRecord:
    vehicles: int
    rate: float
    vehicle: str
    cloudlet: str
    sim_t: float
    status: str
    policy_us: float
    pipeline_us: float
    trip_ms: Optional[float]
    delivered: int


@dataclass
class SimulationResult:
    config: ScenarioConfig
    network: CloudletNetwork
    records: list[MessageRecord]
    counts: Counter

    def event_log_lines(self) -> list[str]:
        return self.network.event_log_lines()


def run_scenario(cfg: ScenarioConfig) -> SimulationResult:
    import random

    rng = random.Random(cfg.seed)
    network, geo = build_network(cfg)
    records: list[MessageRecord] = []
    counts: Counter = Counter()
    n_vehicles = len(cfg.vehicles)
    specs = {v.name: v for v in cfg.vehicles}

    for admin in cfg.admins:
        network.register(admin, "User")
    for v in cfg.vehicles:
        network.register(v.name, v.vtype)
        geo.track(v.name)

    heap: list[tuple[float, int, str, tuple]] = []
    seq = itertools.count()

    def schedule(t: float, kind: str, payload: tuple) -> None:
        if t <= cfg.duration_s:
            heapq.heappush(heap, (t, next(seq), kind, payload))

    for v in cfg.vehicles:
        schedule(0.0, "gps", (v.name,))
        # stagger first publishes inside one period so same-rate vehicles
        # do not all fire on the same tick
        schedule(rng.uniform(0.0, 1.0 / v.rate_hz), "bsm", (v.name, 0))
    for ev in cfg.events:
        schedule(ev["time"], "alert", (ev["vehicle"], ev["alert"]))
    for ru in cfg.rogue_updates:
        schedule(ru["time"], "rogue", (ru["by"], ru["op"], ru["vehicle"]))

    def publish(vehicle: str, alert, now: float) -> None:
        spec = specs[vehicle]
        lat, lon = spec.position(now)
        payload = _bsm(lat, lon, now, alert)
        t_wall = time.perf_counter()
        try:
            results = network.publish(vehicle, shadow_topic(vehicle), payload, now=now)
        except NotMember:
            counts["not_associated"] += 1
            network.log("not_associated", vehicle=vehicle)
            return
        trip_ms = (time.perf_counter() - t_wall) * 1e3
        for result in results:
            counts[result.status] += 1
            records.append(
                MessageRecord(
                    n_vehicles,
                    spec.rate_hz,
                    vehicle,
                    result.cloudlet,
                    now,
                    result.status,
                    result.policy_us,
                    result.pipeline_us,
                    trip_ms if result.status == "notified" else None,
                    result.delivered,
                )
            )

    while heap:
        now, _, kind, payload = heapq.heappop(heap)
        network.clock = now
        if kind == "gps":
            (vehicle,) = payload
            spec = specs[vehicle]
            lat, lon = spec.position(now)
            delta = geo.update_position(vehicle, lat, lon)
            network.log(
                "position",
                vehicle=vehicle,
                latitude=round(lat, 9),
                longitude=round(lon, 9),
                joined=sorted(delta.joined),
                left=sorted(delta.left),
                gap=delta.coverage_gap,
            )
            if delta.coverage_gap:
                counts["coverage_gap"] += 1
            schedule(now + 1.0 / spec.gps_rate_hz, "gps", (vehicle,))
        elif kind == "bsm":
            vehicle, n = payload
            spec = specs[vehicle]
            alert = None
            if spec.alert_every_n and n > 0 and n % spec.alert_every_n == 0:
                alert = spec.alert_value
            publish(vehicle, alert, now)
            counts["published"] += 1
            schedule(now + 1.0 / spec.rate_hz, "bsm", (vehicle, n + 1))
        elif kind == "alert":
            vehicle, alert = payload
            publish(vehicle, alert, now)
            counts["published"] += 1
        elif kind == "rogue":
            by, op, vehicle = payload
            network.publish(by, TOPIC_ROGUE, {"Alert": op, "myVehicle": vehicle}, now=now)

    return SimulationResult(cfg, network, records, counts)


def _bsm(lat: float, lon: float, now: float, alert) -> dict:
    return {
        "state": {
            "reported": {
                "Longitude": round(lon, 9),
                "Latitude": round(lat, 9),
                "Time": f"sim+{now:.6f}s",
                "Velocity": 30,
                "Direction": "north",
                "Elevation": 650,
                "Posit. Accuracy": 5,
                "Steering Wheel Angle": 0,
                "Alert": alert,
            }
        }
    }


def synthesize_load_scenario(
    n_vehicles: int,
    rate_hz: float,
    duration_s: float,
    alert_every_n: int = 0,
    n_cloudlets: int = 1,
    seed: int = 0,
    types: Sequence[str] = ("Vehicle",),
) -> dict:
    """Scenario dict for benchmark-style cells: vehicles on short loops spread
    over a row of tiled square cloudlets."""
    tile = 0.01
    regions = [
        {
            "cloudlet": f"tc-{i + 1}",
            "shape": "rect",
            "lat": [0.0, tile],
            "lon": [round(i * tile, 9), round((i + 1) * tile, 9)],
        }
        for i in range(n_cloudlets)
    ]
    vehicles = []
    for i in range(n_vehicles * n_cloudlets):
        tile_idx = i // n_vehicles
        slot = i % n_vehicles
        lat = 0.001 + 0.008 * (slot / max(1, n_vehicles - 1)) if n_vehicles > 1 else 0.005
        lon0 = tile_idx * tile + 0.002
        vehicles.append(
            {
                "name": f"V-{i}",
                "type": types[i % len(types)],
                "rate_hz": rate_hz,
                "speed_mps": 5.0,
                "path": [[round(lat, 9), round(lon0, 9)], [round(lat, 9), round(lon0 + 0.006, 9)]],
                "alert_every_n": alert_every_n,
            }
        )
    return {
        "name": f"load-{n_vehicles}x{rate_hz}",
        "seed": seed,
        "duration_s": duration_s,
        "regions": regions,
        "vehicles": vehicles,
    }


# --- metrics --------------------------------------------------------------------------


_METRIC_FIELDS = ("policy_us", "pipeline_us", "trip_ms")


def aggregate_metrics(records: Sequence[MessageRecord]) -> list[dict]:
    """One row per (vehicles, rate, metric): mean, population stddev, max."""
    cells: dict[tuple, dict[str, list[float]]] = {}
    for record in records:
        cell = cells.setdefault((record.vehicles, record.rate), {m: [] for m in _METRIC_FIELDS})
        for metric in _METRIC_FIELDS:
            value = getattr(record, metric)
            if value is not None:
                cell[metric].append(value)
    rows = []
    for (vehicles, rate), metrics in sorted(cells.items()):
        for metric in _METRIC_FIELDS:
            values = metrics[metric]
            if not values:
                continue
            rows.append(
                {
                    "vehicles": vehicles,
                    "rate": rate,
                    "metric": metric,
                    "mean": statistics.fmean(values),
                    "stddev": statistics.pstdev(values),
                    "max": max(values),
                }
            )
    return rows


def emit_metrics(result: SimulationResult, out_dir: str, per_message: bool = True) -> list[str]:
    """Write metrics.csv (aggregates), per_message.csv and events.jsonl."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    written = []

    path = os.path.join(out_dir, "metrics.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vehicles", "rate", "metric", "mean", "stddev", "max"])
        for row in aggregate_metrics(result.records):
            writer.writerow(
                [row["vehicles"], row["rate"], row["metric"],
                 f"{row['mean']:.3f}", f"{row['stddev']:.3f}", f"{row['max']:.3f}"]
            )
    written.append(path)

    if per_message:
        path = os.path.join(out_dir, "per_message.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["vehicles", "rate", "vehicle", "cloudlet", "sim_t", "status",
                 "policy_us", "pipeline_us", "trip_ms", "delivered"]
            )
            for r in result.records:
                writer.writerow(
                    [r.vehicles, r.rate, r.vehicle, r.cloudlet, f"{r.sim_t:.6f}",
                     r.status, f"{r.policy_us:.3f}", f"{r.pipeline_us:.3f}",
                     "" if r.trip_ms is None else f"{r.trip_ms:.3f}", r.delivered]
                )
        written.append(path)

    path = os.path.join(out_dir, "events.jsonl")
    with open(path, "w", encoding="utf-8") as fh:
        for line in result.event_log_lines():
            fh.write(line + "\n")
    written.append(path)
    return written
