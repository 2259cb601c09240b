#include <catch2/catch_amalgamated.hpp>

#include "freeflow/metrics.hpp"

using namespace freeflow;

TEST_CASE("co2 rate curve and clamping") {
  CHECK(co2_g_per_km(60.0) == Catch::Approx(182.268));
  CHECK(co2_g_per_km(3.0) == co2_g_per_km(5.0));
  CHECK(co2_g_per_km(200.0) == co2_g_per_km(150.0));
  // Convex with a minimum near 63 km/h.
  CHECK(co2_g_per_km(63.0) < co2_g_per_km(55.0));
  CHECK(co2_g_per_km(63.0) < co2_g_per_km(75.0));
}

TEST_CASE("stop tracker counts downward crossings with hysteresis") {
  StopTracker t;
  t.init(0.0);  // inserted at standstill: disarmed, no stop
  t.step(0.0);
  CHECK(t.stops == 0);
  t.step(1.2);  // re-arms
  t.step(0.1);  // stop #1
  CHECK(t.stops == 1);
  t.step(0.5);  // below re-arm: still disarmed
  t.step(0.1);  // no double-count
  CHECK(t.stops == 1);
  t.step(1.0);  // re-arm boundary is inclusive
  t.step(0.19);
  CHECK(t.stops == 2);
}

TEST_CASE("vehicle inserted at speed starts armed") {
  StopTracker t;
  t.init(13.9);
  t.step(0.0);
  CHECK(t.stops == 1);
}

TEST_CASE("step delay references the commanded ceiling") {
  CHECK(step_delay_s(0.1, 0.0, 16.67) == Catch::Approx(0.1));
  CHECK(step_delay_s(0.1, 16.67, 16.67) == Catch::Approx(0.0));
  CHECK(step_delay_s(0.1, 8.335, 16.67) == Catch::Approx(0.05));
  CHECK(step_delay_s(0.1, 1.0, 0.0) == 0.0);
}

TEST_CASE("report aggregates served, active and latent vehicles") {
  MetricsAccumulator acc;
  // Arrived: 1000 m in 100 s (36 km/h), 10 s delay, 2 s stopped, 1 stop.
  acc.record_served(1000.0, 100.0, 10.0, 2.0, 1, true);
  // Still active: 2000 m in 300 s (24 km/h), 30 s delay, 12 s stopped, 2 stops.
  acc.record_served(2000.0, 300.0, 30.0, 12.0, 2, false);
  acc.record_latent(5.0);
  acc.record_latent(7.0);
  acc.record_latent(9.0);

  Report r = acc.finalize();
  CHECK(r.veh_arrived == 1.0);
  CHECK(r.veh_active == 1.0);
  CHECK(r.demand_latent == 3.0);
  CHECK(r.dist_total_km == Catch::Approx(3.0));
  CHECK(r.speed_avg_kmh == Catch::Approx(27.0));
  CHECK(r.stops_total == 3.0);
  CHECK(r.stops_avg == Catch::Approx(1.5));
  CHECK(r.delay_total_s == Catch::Approx(40.0));
  CHECK(r.delay_avg_s == Catch::Approx(20.0));
  CHECK(r.delay_stop_total_s == Catch::Approx(14.0));
  CHECK(r.delay_stop_avg_s == Catch::Approx(7.0));
  CHECK(r.delay_latent_s == Catch::Approx(21.0));
  CHECK(r.travel_time_avg_s == Catch::Approx(200.0));
  // co2(36)*1km + co2(24)*2km over 3 km, in kg/km, scaled by 5/2.
  double expect = (co2_g_per_km(36.0) * 1.0 + co2_g_per_km(24.0) * 2.0) / 3000.0 * 2.5;
  CHECK(r.emissions_co2 == Catch::Approx(expect));
  CHECK(r.emissions_co2 == Catch::Approx(0.652054));
}

TEST_CASE("empty run produces a zero report") {
  Report r = MetricsAccumulator{}.finalize();
  for (double v : r.row()) CHECK(v == 0.0);
}

TEST_CASE("csv layout: seed rows then mean and stdev") {
  SeedReport a, b;
  a.seed = 1;
  a.report.veh_arrived = 100;
  a.report.dist_total_km = 10.5;
  b.seed = 2;
  b.report.veh_arrived = 110;
  b.report.dist_total_km = 11.5;
  std::string csv = report_csv({a, b});

  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < csv.size()) {
    auto nl = csv.find('\n', start);
    lines.push_back(csv.substr(start, nl - start));
    start = nl + 1;
  }
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] ==
        "seed,VEHARR,DISTTOT,SPEEDAVG,DEMANDLATENT,STOPSAVG,STOPSTOT,DELAYAVG,DELAYSTOPAVG,"
        "DELAYTOT,DELAYSTOPTOT,DELAYLATENT,VEHACT,TRAVTMAVG,EMISSIONSCO2");
  CHECK(lines[1].rfind("1,100,10.5,", 0) == 0);
  CHECK(lines[2].rfind("2,110,11.5,", 0) == 0);
  CHECK(lines[3].rfind("mean,105,11,", 0) == 0);
  // stdev of {100,110} = 7.07106781; of {10.5,11.5} = 0.707106781
  CHECK(lines[4].rfind("stdev,7.07106781,0.707106781,", 0) == 0);
}

TEST_CASE("meta sidecar path swaps the extension") {
  CHECK(meta_path_for("out/report.csv") == "out/report.meta");
  CHECK(meta_path_for("report.csv") == "report.meta");
  CHECK(meta_path_for("noext") == "noext.meta");
  CHECK(meta_path_for("dir.v2/noext") == "dir.v2/noext.meta");
}

TEST_CASE("meta json carries controller, seeds, hash and warnings") {
  MetaInfo m;
  m.controller = "backpressure";
  m.seeds = {1, 2, 3};
  m.scenario_hash_hex = "deadbeef00112233";
  m.warnings = {"windows truncated"};
  auto j = nlohmann::json::parse(meta_json(m));
  CHECK(j["controller"] == "backpressure");
  CHECK(j["seeds"].size() == 3);
  CHECK(j["scenario_hash"] == "deadbeef00112233");
  CHECK(j["warnings"][0] == "windows truncated");
  CHECK(j.contains("delay_reference"));
}
