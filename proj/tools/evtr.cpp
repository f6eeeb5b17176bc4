// Command-line front end: teach, repeat, eval, bench, worldgen.
//
// Exit codes: 0 success, 1 repeat run failed (aborted or incomplete),
// 2 usage/input/validation errors.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "evtr/config.hpp"
#include "evtr/evaluation.hpp"
#include "evtr/event_frame.hpp"
#include "evtr/repeat_controller.hpp"
#include "evtr/simulator.hpp"
#include "evtr/topometric_map.hpp"

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const std::string& label) {
    if (!fs::exists(path)) throw UsageError(label + " not found: " + path);
}

evtr::Config build_config(const std::string& cfg_path, const std::vector<std::string>& sets) {
    evtr::Config cfg;
    if (!cfg_path.empty()) {
        require_file(cfg_path, "config file");
        std::ifstream in(cfg_path);
        cfg = evtr::parse_config(in);
    }
    for (const std::string& s : sets) evtr::config_apply(cfg, s);
    evtr::validate_config(cfg);
    return cfg;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

void write_effective_config(const fs::path& dir, const evtr::Config& cfg) {
    auto out = open_out(dir / "effective.cfg");
    evtr::dump_config(out, cfg);
}

evtr::World load_world(const std::string& path) {
    require_file(path, "world file");
    std::ifstream in(path);
    return evtr::read_world(in);
}

std::vector<evtr::Waypoint> load_waypoints(const std::string& path) {
    require_file(path, "trajectory file");
    std::ifstream in(path);
    return evtr::read_waypoints(in);
}

int cmd_teach(const std::string& cfg_path, const std::vector<std::string>& sets,
              const std::string& world_path, const std::string& path_path,
              const std::string& map_path, const std::string& out_dir,
              const std::string& events_path) {
    evtr::Config cfg = build_config(cfg_path, sets);
    const evtr::World world = load_world(world_path);
    const std::vector<evtr::Waypoint> wps = load_waypoints(path_path);

    evtr::SimSetup setup = evtr::make_setup(cfg);
    setup.collect_events = !events_path.empty();

    const evtr::TeachResult res = evtr::run_teach(world, wps, setup);

    fs::create_directories(out_dir);
    evtr::save_map(res.map, map_path);
    {
        auto out = open_out(fs::path(out_dir) / "teach_trace.csv");
        evtr::write_trace(out, res.trace);
    }
    write_effective_config(out_dir, cfg);
    if (!events_path.empty()) {
        auto out = open_out(events_path);
        evtr::EventStream s{cfg.width, cfg.height, res.events};
        evtr::write_event_stream(out, s);
    }

    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "nodes=%zu\npath_length_m=%.17g\nduration_s=%.17g\nevents=%zu\n",
                  res.map.size(), res.path_length,
                  static_cast<double>(res.duration_us) * 1e-6, res.events.size());
    std::cout << buf << "map=" << map_path << "\n";
    auto summary = open_out(fs::path(out_dir) / "teach_summary.txt");
    summary << buf;
    return 0;
}

int cmd_repeat(const std::string& cfg_path, const std::vector<std::string>& sets,
               const std::string& world_path, const std::string& map_path,
               const std::string& out_dir, const std::string& teach_trace_path,
               bool no_corrections) {
    evtr::Config cfg = build_config(cfg_path, sets);
    const evtr::World world = load_world(world_path);
    require_file(map_path, "map file");
    const evtr::TopometricMap map = evtr::load_map(map_path);

    if (map.width() != cfg.width || map.height() != cfg.height || map.tau_us() != cfg.tau_us)
        throw UsageError("map geometry (" + std::to_string(map.width()) + "x" +
                         std::to_string(map.height()) + ", tau=" + std::to_string(map.tau_us()) +
                         ") does not match the configured camera");

    const evtr::SimSetup setup = evtr::make_setup(cfg);

    std::vector<evtr::Pose2D> ref_pts;
    evtr::Pose2D start_truth;
    if (!teach_trace_path.empty()) {
        require_file(teach_trace_path, "teach trace file");
        std::ifstream in(teach_trace_path);
        const std::vector<evtr::TraceRow> rows = evtr::read_trace(in);
        ref_pts.reserve(rows.size());
        for (const evtr::TraceRow& r : rows) ref_pts.push_back(r.truth);
        start_truth = rows.front().truth;
    } else {
        for (const evtr::MapNode& n : map.nodes()) ref_pts.push_back(n.pose);
        start_truth = map.node(0).pose;
    }
    const evtr::ReferencePath reference(std::move(ref_pts));

    const evtr::RepeatResult res =
        evtr::run_repeat(world, map, reference, start_truth, setup, !no_corrections);

    fs::create_directories(out_dir);
    {
        auto out = open_out(fs::path(out_dir) / "repeat_trace.csv");
        evtr::write_trace(out, res.trace);
    }
    {
        auto out = open_out(fs::path(out_dir) / "corrections.csv");
        evtr::write_corrections_header(out);
        for (const evtr::CorrectionReport& r : res.reports)
            evtr::write_corrections_row(out, r, /*zero_latency=*/true);
    }
    write_effective_config(out_dir, cfg);

    char buf[256];
    std::snprintf(buf, sizeof(buf), "completed=%d\ncompleted_pct=%.17g\nticks=%zu\n",
                  res.completed ? 1 : 0, res.completed_pct, res.reports.size());
    std::cout << buf;
    if (!res.completed) std::cout << "reason=" << res.abort_reason << "\n";
    auto summary = open_out(fs::path(out_dir) / "repeat_summary.txt");
    summary << buf;
    if (!res.completed) summary << "reason=" << res.abort_reason << "\n";
    return res.completed ? 0 : 1;
}

int cmd_eval(const std::string& teach_path, const std::string& repeat_path,
             const std::string& out_path) {
    require_file(teach_path, "teach trace file");
    require_file(repeat_path, "repeat trace file");
    std::ifstream tin(teach_path), rin(repeat_path);
    const std::vector<evtr::TraceRow> teach = evtr::read_trace(tin);
    const std::vector<evtr::TraceRow> repeat = evtr::read_trace(rin);
    std::vector<evtr::Pose2D> tp, rp;
    tp.reserve(teach.size());
    rp.reserve(repeat.size());
    for (const evtr::TraceRow& r : teach) tp.push_back(r.truth);
    for (const evtr::TraceRow& r : repeat) rp.push_back(r.truth);

    const evtr::AteResult res = evtr::ate(tp, rp);
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "ate_mean_m=%.17g\nate_rms_m=%.17g\nate_max_m=%.17g\nposes=%zu\n", res.mean,
                  res.rms, res.max, res.distances.size());
    std::cout << buf;

    if (!out_path.empty()) {
        auto out = open_out(out_path);
        out << "teach_index,nn_repeat_index,distance_m\n";
        char row[128];
        for (std::size_t i = 0; i < res.distances.size(); ++i) {
            std::snprintf(row, sizeof(row), "%zu,%zu,%.17g\n", i, res.nn_index[i],
                          res.distances[i]);
            out << row;
        }
    }
    return 0;
}

void print_bench(const std::string& label, const evtr::BenchReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "%smean_us=%.17g\n%smedian_us=%.17g\n%sp99_us=%.17g\n%smax_us=%.17g\n"
                  "%srate_hz=%.17g\n%seffective_rate_hz=%.17g\n",
                  label.c_str(), r.mean_us, label.c_str(), r.median_us, label.c_str(), r.p99_us,
                  label.c_str(), r.max_us, label.c_str(), r.rate_hz, label.c_str(),
                  r.effective_rate_hz);
    std::cout << buf;
}

int cmd_bench(const std::string& cfg_path, const std::vector<std::string>& sets,
              const std::string& map_path, int iterations, bool compare) {
    evtr::Config cfg = build_config(cfg_path, sets);
    require_file(map_path, "map file");
    const evtr::TopometricMap map = evtr::load_map(map_path);

    std::vector<const evtr::EventFrame*> frames;
    frames.reserve(map.size());
    for (const evtr::MapNode& n : map.nodes()) frames.push_back(&n.frame);

    evtr::BenchParams bp;
    bp.compression = cfg.compression;
    bp.s = cfg.search_half_width;
    bp.gains.g_theta = cfg.g_theta;
    bp.gains.g_rho = cfg.g_rho;
    evtr::parse_rho_bar(cfg.rho_bar, bp.gains);

    std::cout << "timer_overhead_us=" << evtr::bench_timer_overhead_us() << "\n";
    std::cout << "iterations=" << iterations << "\n";

    const evtr::BenchReport main = evtr::bench_vision(map, frames, bp, iterations);
    print_bench("", main);

    if (compare) {
        evtr::BenchParams per_frame = bp;
        per_frame.per_frame = true;
        print_bench("per_frame_", evtr::bench_vision(map, frames, per_frame, iterations));
        evtr::BenchParams uncompressed = bp;
        uncompressed.compression = 1;
        print_bench("m1_", evtr::bench_vision(map, frames, uncompressed, iterations));
    }
    return 0;
}

int cmd_worldgen(const std::string& path_path, const std::string& out_path, double spacing,
                 double lat_min, double lat_max, unsigned long long seed) {
    const std::vector<evtr::Waypoint> wps = load_waypoints(path_path);
    const evtr::World w = evtr::make_corridor_world(wps, spacing, lat_min, lat_max, seed);
    auto out = open_out(out_path);
    evtr::write_world(out, w);
    std::cout << "landmarks=" << w.landmarks.size() << "\nworld=" << out_path << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"event-camera visual teach and repeat"};
    app.require_subcommand(1);

    std::string cfg_path, world_path, path_path, map_path, out_dir = ".", events_path;
    std::string teach_trace_path, teach_file, repeat_file, eval_out, world_out;
    std::vector<std::string> sets;
    bool no_corrections = false, compare = false;
    int iterations = 300;
    double spacing = 0.5, lat_min = 1.0, lat_max = 2.5;
    unsigned long long gen_seed = 7;

    CLI::App* teach = app.add_subcommand("teach", "drive a waypoint path and record a map");
    teach->add_option("--config", cfg_path, "config file (key=value lines)");
    teach->add_option("--set", sets, "override config entries, key=value");
    teach->add_option("--world", world_path, "world file")->required();
    teach->add_option("--path", path_path, "waypoint file")->required();
    teach->add_option("--out-map", map_path, "output map file")->required();
    teach->add_option("--out-dir", out_dir, "directory for trace/config/summary");
    teach->add_option("--dump-events", events_path, "also write the raw event stream");

    CLI::App* repeat = app.add_subcommand("repeat", "replay a taught map in closed loop");
    repeat->add_option("--config", cfg_path, "config file (key=value lines)");
    repeat->add_option("--set", sets, "override config entries, key=value");
    repeat->add_option("--world", world_path, "world file")->required();
    repeat->add_option("--map", map_path, "map file from teach")->required();
    repeat->add_option("--out-dir", out_dir, "directory for trace/corrections/summary");
    repeat->add_option("--teach-trace", teach_trace_path,
                       "teach trace CSV; grades the run against ground truth");
    repeat->add_flag("--no-corrections", no_corrections, "odometry-only baseline");

    CLI::App* eval = app.add_subcommand("eval", "trajectory error between two traces");
    eval->add_option("--teach", teach_file, "teach trace CSV")->required();
    eval->add_option("--repeat", repeat_file, "repeat trace CSV")->required();
    eval->add_option("--out", eval_out, "per-pose distance CSV");

    CLI::App* bench = app.add_subcommand("bench", "time the vision stage on a recorded map");
    bench->add_option("--config", cfg_path, "config file (key=value lines)");
    bench->add_option("--set", sets, "override config entries, key=value");
    bench->add_option("--map", map_path, "map file")->required();
    bench->add_option("--iterations", iterations, "timed iterations (>= 100)");
    bench->add_flag("--compare", compare, "also time the per-frame path and compression off");

    CLI::App* worldgen = app.add_subcommand("worldgen", "scatter a corridor of posts along a path");
    worldgen->add_option("--path", path_path, "waypoint file to decorate")->required();
    worldgen->add_option("--out", world_out, "output world file")->required();
    worldgen->add_option("--spacing", spacing, "post spacing along the path, meters");
    worldgen->add_option("--lat-min", lat_min, "minimum lateral offset, meters");
    worldgen->add_option("--lat-max", lat_max, "maximum lateral offset, meters");
    worldgen->add_option("--seed", gen_seed, "world seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*teach)
            return cmd_teach(cfg_path, sets, world_path, path_path, map_path, out_dir,
                             events_path);
        if (*repeat)
            return cmd_repeat(cfg_path, sets, world_path, map_path, out_dir, teach_trace_path,
                              no_corrections);
        if (*eval) return cmd_eval(teach_file, repeat_file, eval_out);
        if (*bench) return cmd_bench(cfg_path, sets, map_path, iterations, compare);
        if (*worldgen)
            return cmd_worldgen(path_path, world_out, spacing, lat_min, lat_max, gen_seed);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
