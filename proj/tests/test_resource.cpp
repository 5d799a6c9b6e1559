#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "chainreduce/resource.hpp"

using namespace chainreduce;

TEST_CASE("device state machine transitions") {
    CHECK(legal_transition(DeviceState::Free, DeviceState::Busy));
    CHECK(legal_transition(DeviceState::Free, DeviceState::Send));
    CHECK(legal_transition(DeviceState::Free, DeviceState::Get));
    CHECK(legal_transition(DeviceState::Busy, DeviceState::Free));
    CHECK(legal_transition(DeviceState::Send, DeviceState::Done));
    CHECK(legal_transition(DeviceState::Get, DeviceState::Free));
    CHECK(legal_transition(DeviceState::Done, DeviceState::Free));  // iteration reset

    CHECK_FALSE(legal_transition(DeviceState::Busy, DeviceState::Send));
    CHECK_FALSE(legal_transition(DeviceState::Busy, DeviceState::Get));
    CHECK_FALSE(legal_transition(DeviceState::Send, DeviceState::Free));
    CHECK_FALSE(legal_transition(DeviceState::Get, DeviceState::Done));
    CHECK_FALSE(legal_transition(DeviceState::Done, DeviceState::Send));
}

TEST_CASE("classify") {
    BusyPolicy policy;  // cpu 80, battery 15, memory 64
    ResourceReport r;
    r.free_memory_mb = 1000;
    r.battery_pct = 90;
    r.in_use = false;
    r.charging = false;
    r.cpu_pct = 10;
    CHECK(classify(r, policy) == DeviceState::Free);

    ResourceReport in_use = r;
    in_use.in_use = true;
    CHECK(classify(in_use, policy) == DeviceState::Busy);

    ResourceReport boundary = r;
    boundary.cpu_pct = 80.0;  // strict inequality: exactly at threshold is Free
    CHECK(classify(boundary, policy) == DeviceState::Free);
    boundary.cpu_pct = 80.01;
    CHECK(classify(boundary, policy) == DeviceState::Busy);

    ResourceReport low_bat = r;
    low_bat.battery_pct = 10;
    CHECK(classify(low_bat, policy) == DeviceState::Busy);
    low_bat.charging = true;  // low battery while charging stays Free
    CHECK(classify(low_bat, policy) == DeviceState::Free);

    ResourceReport low_mem = r;
    low_mem.free_memory_mb = 32;
    CHECK(classify(low_mem, policy) == DeviceState::Busy);
}

TEST_CASE("charge_energy") {
    EnergyCosts costs;
    EnergyMeter m;
    m = charge_energy(m, EnergyEvent::train_for(0.0), costs);
    CHECK(m.consumed() == 0.0);

    m = charge_energy(m, EnergyEvent::aggregate(), costs);  // c_agg = 0.8
    CHECK(m.consumed() == doctest::Approx(0.8));
    CHECK(m.aggregate_compute == doctest::Approx(0.8));

    EnergyCosts heavy = costs;
    heavy.per_byte = 0.001;
    EnergyMeter m2;
    m2 = charge_energy(m2, EnergyEvent::send_bytes(1000), heavy);
    CHECK(m2.consumed() == doctest::Approx(1.0));
    CHECK(m2.send == doctest::Approx(1.0));

    EnergyMeter m3;
    m3 = charge_energy(m3, EnergyEvent::train_for(100), costs);  // 0.05/ms
    CHECK(m3.train == doctest::Approx(5.0));
    m3 = charge_energy(m3, EnergyEvent::report(), costs);
    CHECK(m3.report == doctest::Approx(1e-3));
    m3 = charge_energy(m3, EnergyEvent::receive_bytes(500), costs);
    CHECK(m3.receive == doctest::Approx(0.05));
    CHECK(m3.consumed() ==
          doctest::Approx(m3.train + m3.aggregate_compute + m3.send + m3.receive + m3.report));

    CHECK_THROWS_AS(charge_energy(m3, EnergyEvent::train_for(-1), costs), InvalidInput);
    CHECK_THROWS_AS(charge_energy(m3, EnergyEvent::send_bytes(-5), costs), InvalidInput);
}

TEST_CASE("energy_variance") {
    EnergyMeter a, b;
    a.train = 4.0;
    b.train = 4.0;
    CHECK(energy_variance({a, b}) == doctest::Approx(0.0));

    EnergyMeter one, three;
    one.train = 1.0;
    three.train = 3.0;
    CHECK(energy_variance({one, three}) == doctest::Approx(1.0));

    // two-pass oracle on random meters
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 50.0);
    std::vector<EnergyMeter> ms(8);
    for (auto& m : ms) {
        m.train = u(rng);
        m.send = u(rng);
        m.report = u(rng);
    }
    double mu = 0.0;
    for (const auto& m : ms) mu += m.consumed();
    mu /= 8.0;
    double var = 0.0;
    for (const auto& m : ms) var += (m.consumed() - mu) * (m.consumed() - mu);
    var /= 8.0;
    CHECK(energy_variance(ms) == doctest::Approx(var).epsilon(1e-12));

    CHECK_THROWS_AS(energy_variance({}), InvalidInput);
}

TEST_CASE("normalize") {
    CHECK(normalize(0, 0, 10) == 0.0);
    CHECK(normalize(10, 0, 10) == 1.0);
    CHECK(normalize(5, 0, 10) == doctest::Approx(0.5));
    CHECK(normalize(-3, 0, 10) == 0.0);   // clamped
    CHECK(normalize(42, 0, 10) == 1.0);   // clamped
    CHECK_THROWS_AS(normalize(1, 5, 5), InvalidInput);
    CHECK_THROWS_AS(normalize(1, 6, 5), InvalidInput);
}
