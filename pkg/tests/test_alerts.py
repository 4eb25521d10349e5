import random

import pytest

from cloudletsim.alerts import (
    AlertRuleSet,
    AlertWindow,
    Decision,
    DecisionKind,
    Notification,
    RogueList,
    apply_rogue_update,
    classify_and_decide,
    evict_window,
    normalize_alert,
    TOPIC_DEVICES,
    TOPIC_MEDICAL,
    TOPIC_POLICE,
)
from cloudletsim.errors import MalformedCommand, UnknownAlertType

from oracles import window_count_oracle


@pytest.fixture
def rules():
    return AlertRuleSet.default()


@pytest.fixture
def window(rules):
    return AlertWindow(rules.window_seconds)


@pytest.fixture
def rogues(rules):
    return RogueList(rules.initial_rogues)


def decide(rules, window, rogues, sender, alert, source_type, now=0.0):
    return classify_and_decide(sender, alert, source_type, window, rules, rogues, now)


def test_single_vehicle_tireslip_is_low(rules, window, rogues):
    decision = decide(rules, window, rogues, "Car-1", "Tireslip", "Vehicle")
    assert decision.kind is DecisionKind.NOTIFY
    assert decision.notifications == (Notification(TOPIC_DEVICES, "Ice Threat - Low"),)


def test_second_distinct_vehicle_escalates_to_high(rules, window, rogues):
    decide(rules, window, rogues, "Car-1", "Tireslip", "Vehicle", now=0.0)
    decision = decide(rules, window, rogues, "Car-2", "Tireslip", "Vehicle", now=1.0)
    assert decision.notifications == (Notification(TOPIC_DEVICES, "Ice-threat High"),)


def test_repeat_reports_from_one_vehicle_stay_low(rules, window, rogues):
    for i in range(5):
        decision = decide(rules, window, rogues, "Car-1", "Tireslip", "Vehicle", now=float(i))
    assert decision.notifications == (Notification(TOPIC_DEVICES, "Ice Threat - Low"),)


def test_single_police_report_is_high(rules, window, rogues):
    decision = decide(rules, window, rogues, "Patrol-7", "Tireslip", "Police")
    assert decision.notifications == (Notification(TOPIC_DEVICES, "Ice-threat High"),)


def test_single_medical_report_is_high(rules, window, rogues):
    decision = decide(rules, window, rogues, "Ambulance-1", "Tireslip", "Medical")
    assert decision.notifications == (Notification(TOPIC_DEVICES, "Ice-threat High"),)


def test_accident_routes_to_medical_and_police(rules, window, rogues):
    decision = decide(rules, window, rogues, "Car-1", "Accident", "Vehicle")
    assert decision.kind is DecisionKind.NOTIFY
    assert decision.notifications == (
        Notification(TOPIC_MEDICAL, "Accident- Require Assistance"),
        Notification(TOPIC_POLICE, "Accident- Require Assistance"),
    )


def test_accident_from_any_source(rules, window, rogues):
    for source_type in ("Vehicle", "Police", "Medical", "Infrastructure"):
        decision = decide(rules, AlertWindow(10.0), rogues, "X", "Accident", source_type)
        assert decision.kind is DecisionKind.NOTIFY


def test_null_alert_is_log_only(rules, window, rogues):
    for null in (None, "Null", "null", ""):
        decision = decide(rules, window, rogues, "Car-1", null, "Vehicle")
        assert decision.kind is DecisionKind.LOG_ONLY
        assert decision.notifications == ()


def test_unknown_alert_type_raises(rules, window, rogues):
    with pytest.raises(UnknownAlertType):
        decide(rules, window, rogues, "Car-1", "EarthQuake", "Vehicle")


def test_rogue_sender_suppressed(rules, window, rogues):
    decision = decide(rules, window, rogues, "Car-X", "Tireslip", "Vehicle")
    assert decision.kind is DecisionKind.ROGUE
    assert decision.notifications == ()
    # rogue reports must not feed the escalation window
    follow_up = decide(rules, window, rogues, "Car-1", "Tireslip", "Vehicle", now=1.0)
    assert follow_up.notifications == (Notification(TOPIC_DEVICES, "Ice Threat - Low"),)


def test_tireslip_from_infrastructure_matches_no_rule(rules, window, rogues):
    decision = decide(rules, window, rogues, "RSU-1", "Tireslip", "Infrastructure")
    assert decision.kind is DecisionKind.LOG_ONLY


def test_escalation_is_monotone_in_reporters(rules, rogues):
    # adding a distinct reporter never downgrades High back to Low
    window = AlertWindow(10.0)
    seen_high = False
    for i in range(6):
        decision = decide(rules, window, rogues, f"Car-{i}", "Tireslip", "Vehicle", now=0.5 * i)
        text = decision.notifications[0].text
        if text == "Ice-threat High":
            seen_high = True
        assert not (seen_high and text == "Ice Threat - Low")
    assert seen_high


def test_rogue_add_delete_list_roundtrip(rules, rogues):
    response = apply_rogue_update({"Alert": "LIST", "myVehicle": None}, rogues)
    assert response["vehicles"] == ["Car-X", "Car-Y", "Vehicle-Z"]
    apply_rogue_update({"Alert": "ADD", "myVehicle": "Car-Q"}, rogues)
    assert "Car-Q" in rogues
    apply_rogue_update({"Alert": "ADD", "myVehicle": "Car-Q"}, rogues)  # idempotent
    apply_rogue_update({"Alert": "DELETE", "myVehicle": "Car-X"}, rogues)
    response = apply_rogue_update({"Alert": "LIST", "myVehicle": None}, rogues)
    assert response["vehicles"] == ["Car-Q", "Car-Y", "Vehicle-Z"]
    assert response["myVehicle"] is None


def test_rogue_delete_unknown_is_idempotent(rogues):
    before = rogues.names()
    apply_rogue_update({"Alert": "DELETE", "myVehicle": "NotThere"}, rogues)
    assert rogues.names() == before


def test_rogue_revision_bumps_on_updates(rogues):
    start = rogues.revision
    apply_rogue_update({"Alert": "ADD", "myVehicle": "A"}, rogues)
    apply_rogue_update({"Alert": "DELETE", "myVehicle": "A"}, rogues)
    assert rogues.revision == start + 2


def test_rogue_malformed_commands(rogues):
    with pytest.raises(MalformedCommand):
        apply_rogue_update({"Alert": "ADD", "myVehicle": None}, rogues)
    with pytest.raises(MalformedCommand):
        apply_rogue_update({"Alert": "WIPE", "myVehicle": "x"}, rogues)
    with pytest.raises(MalformedCommand):
        apply_rogue_update({"nothing": True}, rogues)
    with pytest.raises(MalformedCommand):
        apply_rogue_update({"Alert": "LIST", "myVehicle": "Car-X"}, rogues)


def test_delete_restores_normal_flow(rules, window, rogues):
    apply_rogue_update({"Alert": "DELETE", "myVehicle": "Car-X"}, rogues)
    decision = decide(rules, window, rogues, "Car-X", "Tireslip", "Vehicle")
    assert decision.kind is DecisionKind.NOTIFY


def test_window_eviction_basic():
    window = AlertWindow(10.0)
    window.record("TireSlip", "a", 0.0)
    window.record("TireSlip", "b", 5.0)
    assert window.distinct_count("TireSlip", 1.0) == 2
    # at t=11 the first report has aged out, the second survives
    assert evict_window(window, 11.0).distinct_count("TireSlip", 11.0) == 1


def test_window_refresh_keeps_reporter_alive():
    window = AlertWindow(10.0)
    window.record("TireSlip", "a", 0.0)
    window.record("TireSlip", "a", 8.0)
    assert window.distinct_count("TireSlip", 12.0) == 1
    assert window.distinct_count("TireSlip", 18.1) == 0


def test_window_matches_replay_oracle():
    # Eviction is destructive, so probes advance monotonically like the
    # pipeline's clock does; the oracle replays the full report log.
    rng = random.Random(2024)
    for _ in range(100):
        window_s = rng.choice([1.0, 5.0, 10.0])
        window = AlertWindow(window_s)
        log: list[tuple[float, str]] = []
        t = 0.0
        for _ in range(rng.randint(1, 60)):
            t += rng.random() * 3
            vehicle = f"v{rng.randint(0, 7)}"
            window.record("TireSlip", vehicle, t)
            log.append((t, vehicle))
            assert window.distinct_count("TireSlip", t) == \
                window_count_oracle(log, t, window_s)


def test_normalize_alert_values():
    assert normalize_alert("Tireslip") == "TireSlip"
    assert normalize_alert("TIRESLIP") == "TireSlip"
    assert normalize_alert("accident") == "Accident"
    assert normalize_alert(None) is None
    assert normalize_alert("Null") is None
