import json
import random

import pytest

from cloudletsim import data as bundled
from cloudletsim.alerts import (
    AlertRuleSet,
    TOPIC_DEVICES,
    TOPIC_MEDICAL,
    TOPIC_POLICE,
    TOPIC_ROGUE,
)
from cloudletsim.attributes import AttributeStore, SYSTEM, load_config
from cloudletsim.broker import (
    BsmMessage,
    CloudletNetwork,
    shadow_topic,
)
from cloudletsim.errors import (
    CapacityExceeded,
    MalformedMessage,
    NotMember,
    NotRegistered,
    QueueOverflow,
    SendDenied,
    Unauthorized,
    UnknownTopic,
)
from cloudletsim.policy import PolicyEngine

from oracles import WorldData, communicate_oracle
from worldgen import random_world


def build_network(**kwargs) -> CloudletNetwork:
    store = AttributeStore()
    load_config(store, json.loads(bundled.text("attributes.json")))
    engine = PolicyEngine(store)
    engine.load_text(bundled.text("policies.policy"))
    return CloudletNetwork(store, engine, **kwargs)


def bsm_payload(alert=None, lat=29.47, lon=-98.50, time_str="2019-03-19 11:27:40.237734"):
    return {
        "state": {
            "reported": {
                "Longitude": lon,
                "Latitude": lat,
                "Time": time_str,
                "Velocity": "30",
                "Direction": "north",
                "Elevation": "650",
                "Posit. Accuracy": "5",
                "Steering Wheel Angle": "0",
                "Alert": alert,
            }
        }
    }


@pytest.fixture
def net():
    network = build_network()
    network.create_cloudlet("tc-1")
    for i in range(1, 4):
        network.register(f"Car-{i}", "Vehicle")
        network.cloudlet("tc-1").join(f"Car-{i}")
    return network


def test_join_creates_shadow_topic_and_subscriptions(net):
    tc = net.cloudlet("tc-1")
    assert shadow_topic("Car-1") in tc.topics
    assert "Car-1" in tc.topics[TOPIC_DEVICES]
    assert "Car-1" not in tc.topics[TOPIC_POLICE]


def test_police_and_medical_join_their_topics(net):
    tc = net.cloudlet("tc-1")
    net.register("Patrol-1", "Police")
    net.register("Ambulance-1", "Medical")
    tc.join("Patrol-1")
    tc.join("Ambulance-1")
    assert "Patrol-1" in tc.topics[TOPIC_POLICE]
    assert "Patrol-1" not in tc.topics[TOPIC_MEDICAL]
    assert "Ambulance-1" in tc.topics[TOPIC_MEDICAL]
    assert "Patrol-1" in tc.topics[TOPIC_DEVICES]


def test_join_requires_registration(net):
    with pytest.raises(NotRegistered):
        net.cloudlet("tc-1").join("Stranger")


def test_capacity_limit_enforced():
    network = build_network()
    tc = network.create_cloudlet("tc-small", max_members=2)
    for i in range(2):
        network.register(f"V-{i}", "Vehicle")
        tc.join(f"V-{i}")
    network.register("V-2", "Vehicle")
    with pytest.raises(CapacityExceeded):
        tc.join("V-2")


def test_rejoin_is_idempotent(net):
    tc = net.cloudlet("tc-1")
    tc.join("Car-1")
    assert sorted(tc.members) == ["Car-1", "Car-2", "Car-3"]


def test_null_alert_logged_and_dropped(net):
    result = net.cloudlet("tc-1").publish_bsm("Car-1", bsm_payload(None), now=0.0)
    assert result.status == "log_only"
    assert result.delivered == 0
    assert all(len(box) == 0 for box in net.inboxes.values())


def test_first_tireslip_fans_out_low_to_devices(net):
    result = net.cloudlet("tc-1").publish_bsm("Car-1", bsm_payload("Tireslip"), now=0.0)
    assert result.status == "notified"
    assert result.delivered == 2  # everyone on test/devices except the sender
    assert len(net.inboxes["Car-1"]) == 0
    for name in ("Car-2", "Car-3"):
        [record] = net.inboxes[name]
        assert record.payload == {
            "message": "Ice Threat - Low",
            "myEvent": "2019-03-19 11:27:40.237734",
        }


def test_non_member_publish_rejected(net):
    net.register("Outsider", "Vehicle")
    with pytest.raises(NotMember):
        net.cloudlet("tc-1").publish_bsm("Outsider", bsm_payload("Tireslip"), now=0.0)


def test_send_denied_raises(net):
    net.store.set_attribute(SYSTEM, "sender-types", set())
    with pytest.raises(SendDenied) as info:
        net.cloudlet("tc-1").publish_bsm("Car-1", bsm_payload("Tireslip"), now=0.0)
    assert info.value.policy_us > 0


def test_forward_denied_subscriber_receives_nothing(net):
    # vehicles may send but only police receive; the topic decision still fires
    net.store.set_attribute(SYSTEM, "receiver-types", {"Police"})
    result = net.cloudlet("tc-1").publish_bsm("Car-1", bsm_payload("Tireslip"), now=0.0)
    assert result.status == "notified"
    assert result.delivered == 0
    assert result.blocked_forward == 2
    assert all(len(box) == 0 for box in net.inboxes.values())


def test_accident_routes_to_police_and_medical_members(net):
    net.register("Patrol-1", "Police")
    net.register("Ambulance-1", "Medical")
    tc = net.cloudlet("tc-1")
    tc.join("Patrol-1")
    tc.join("Ambulance-1")
    result = tc.publish_bsm("Car-1", bsm_payload("Accident"), now=0.0)
    assert result.status == "notified"
    assert {r.topic for r in net.inboxes["Patrol-1"]} == {TOPIC_POLICE}
    assert {r.topic for r in net.inboxes["Ambulance-1"]} == {TOPIC_MEDICAL}
    assert net.inboxes["Patrol-1"][0].payload["message"] == "Accident- Require Assistance"
    # regular vehicles are not on the accident topics
    assert len(net.inboxes["Car-2"]) == 0


def test_rogue_sender_suppressed_and_reported(net):
    net.cloudlet("tc-1").rogues.add("Car-1")
    result = net.cloudlet("tc-1").publish_bsm("Car-1", bsm_payload("Tireslip"), now=0.0)
    assert result.status == "rogue"
    assert result.delivered == 0
    events = [e for e in net.events if e["kind"] == "rogue_detected"]
    assert events and events[0]["vehicle"] == "Car-1"
    assert events[0]["latitude"] == 29.47


def test_unknown_alert_dropped(net):
    result = net.cloudlet("tc-1").publish_bsm("Car-1", bsm_payload("Meteor"), now=0.0)
    assert result.status == "dropped_unknown"


def test_malformed_position_flagged_not_swapped(net):
    # the well-known swapped sample: Latitude -98.5 is out of range
    payload = bsm_payload("Tireslip", lat=-98.50038363, lon=29.472741982)
    result = net.cloudlet("tc-1").publish_bsm("Car-1", payload, now=0.0)
    assert result.status == "dropped_malformed"
    assert any(e["kind"] == "dropped_malformed" for e in net.events)


def test_delivered_payloads_are_anonymous(net):
    net.cloudlet("tc-1").publish_bsm("Car-1", bsm_payload("Tireslip"), now=0.0)
    net.cloudlet("tc-1").publish_bsm("Car-2", bsm_payload("Tireslip"), now=1.0)
    for box in net.inboxes.values():
        for record in box:
            text = json.dumps(record.payload)
            assert set(record.payload) == {"message", "myEvent"}
            for secret in ("Car-1", "Car-2", "29.47", "-98.5", "north", "650",
                           "Velocity", "Latitude", "Longitude", "Steering"):
                assert secret not in text


def test_conservation_of_message_statuses(net):
    tc = net.cloudlet("tc-1")
    net.cloudlet("tc-1").rogues.add("Car-3")
    attempts = 0
    for i in range(30):
        sender = f"Car-{1 + i % 3}"
        alert = [None, "Tireslip", "Accident", "Meteor"][i % 4]
        try:
            tc.publish_bsm(sender, bsm_payload(alert), now=float(i))
            attempts += 1
        except SendDenied:
            attempts += 1
    statuses = ("notified", "log_only", "rogue", "send_denied",
                "dropped_unknown", "dropped_malformed", "queue_dropped")
    assert sum(tc.stats[s] for s in statuses) == attempts


def test_bsm_parse_accepts_string_numbers():
    msg = BsmMessage.parse("v", "t", bsm_payload("Tireslip"))
    assert msg.velocity == 30.0
    assert msg.elevation == 650.0
    assert msg.alert == "Tireslip"


def test_bsm_parse_rejects_bad_shapes():
    with pytest.raises(MalformedMessage):
        BsmMessage.parse("v", "t", {"state": []})
    with pytest.raises(MalformedMessage):
        BsmMessage.parse("v", "t", {"state": {"reported": {"Latitude": 0, "Longitude": 0}}})


def test_deliver_plain_fanout(net):
    tc = net.cloudlet("tc-1")
    records = tc.deliver(TOPIC_DEVICES, {"message": "hello", "myEvent": "now"})
    assert len(records) == 3
    assert len({r.subscriber for r in records}) == 3
    assert all(r.payload == {"message": "hello", "myEvent": "now"} for r in records)
    with pytest.raises(UnknownTopic):
        tc.deliver("test/none", {})
    assert tc.deliver(TOPIC_MEDICAL, {"message": "x", "myEvent": "y"}) == []


def test_pipeline_fanout_matches_subscription_recount(net):
    # fan-out = subscribers of the decided topic, minus sender, minus denied
    net.register("Patrol-1", "Police")
    tc = net.cloudlet("tc-1")
    tc.join("Patrol-1")
    net.store.set_attribute(SYSTEM, "receiver-types", {"Vehicle"})  # police denied
    result = tc.publish_bsm("Car-1", bsm_payload("Tireslip"), now=0.0)
    subscribers = set(tc.topics[TOPIC_DEVICES])
    denied = {
        n for n in subscribers
        if net.controller.entity_type(n) not in ("Vehicle",)
    }
    expected = len(subscribers - denied - {"Car-1"})
    assert result.delivered == expected
    assert result.blocked_forward == len(denied - {"Car-1"})


# --- queue bounds ------------------------------------------------------------------


def test_queue_drops_oldest_on_overflow():
    network = build_network()
    tc = network.create_cloudlet("tc-q", max_queue_bytes=700, auto_drain=False)
    network.register("V-0", "Vehicle")
    tc.join("V-0")
    for i in range(4):
        tc.publish_bsm("V-0", bsm_payload("Tireslip"), now=float(i))
    assert tc.stats["queue_dropped"] > 0
    assert tc.queued_bytes <= 700
    results = tc.drain()
    assert tc.queued_bytes == 0
    assert len(results) + tc.stats["queue_dropped"] == 4


def test_oversized_frame_rejected():
    network = build_network()
    tc = network.create_cloudlet("tc-q", max_queue_bytes=64, auto_drain=False)
    network.register("V-0", "Vehicle")
    tc.join("V-0")
    with pytest.raises(QueueOverflow):
        tc.publish_bsm("V-0", bsm_payload("Tireslip"), now=0.0)


# --- rogue updates over the broker -------------------------------------------------


def test_rogue_update_via_topic_requires_admin(net):
    net.register("admin-1", "User")
    response = net.publish("admin-1", TOPIC_ROGUE, {"Alert": "LIST", "myVehicle": None})
    assert response["vehicles"] == ["Car-X", "Car-Y", "Vehicle-Z"]
    with pytest.raises(Unauthorized):
        net.publish("Car-1", TOPIC_ROGUE, {"Alert": "ADD", "myVehicle": "Car-2"})


def test_rogue_update_effective_for_next_message(net):
    net.register("admin-1", "User")
    tc = net.cloudlet("tc-1")
    assert tc.publish_bsm("Car-1", bsm_payload("Tireslip"), now=0.0).status == "notified"
    net.publish("admin-1", TOPIC_ROGUE, {"Alert": "ADD", "myVehicle": "Car-1"})
    assert tc.publish_bsm("Car-1", bsm_payload("Tireslip"), now=1.0).status == "rogue"
    net.publish("admin-1", TOPIC_ROGUE, {"Alert": "DELETE", "myVehicle": "Car-1"})
    assert tc.publish_bsm("Car-1", bsm_payload("Tireslip"), now=2.0).status == "notified"


# --- communicate -------------------------------------------------------------------


def test_communicate_requires_shared_cloudlet(net):
    net.create_cloudlet("tc-2")
    net.register("V-a", "Vehicle")
    net.register("V-b", "Vehicle")
    net.cloudlet("tc-1").join("V-a")
    net.cloudlet("tc-2").join("V-b")
    assert net.communicate("V-a", "V-b") is False
    net.cloudlet("tc-1").join("V-b")
    assert net.communicate("V-a", "V-b") is True


def test_communicate_respects_system_policies(net):
    net.engine.load_text('auth lockdown-off() := "User" in att(system, "admin-types")')
    assert net.communicate("Car-1", "Car-2") is True
    net.store.set_attribute(SYSTEM, "admin-types", set())
    assert net.communicate("Car-1", "Car-2") is False


def test_communicate_matches_bruteforce_enumeration():
    rng = random.Random(606060)
    for _ in range(60):
        world = random_world(rng)
        store = world.store
        engine = PolicyEngine(store)
        # random well-typed send/forward policies over this world's attributes
        from worldgen import random_formula
        from cloudletsim.policy import AuthFunction, Formal

        send = AuthFunction(
            "send", (Formal("s"), Formal("tc")),
            random_formula(rng, world, [Formal("s"), Formal("tc")], depth=3),
        )
        forward = AuthFunction(
            "forward", (Formal("tc"), Formal("v")),
            random_formula(rng, world, [Formal("tc"), Formal("v")], depth=3),
        )
        engine.add(send)
        engine.add(forward)
        network = CloudletNetwork(store, engine, rules=AlertRuleSet.default())
        network._entities = {e.name: e for e in store.entities()}
        network.cloudlets = {}
        data = WorldData(store.snapshot())
        functions = {"send": send, "forward": forward}
        for source in world.sources[:4]:
            for target in world.sources[:4]:
                if source is target:
                    continue
                got = network.communicate(source.name, target.name)
                want = communicate_oracle(data, functions, source.name, target.name)
                assert got == want
