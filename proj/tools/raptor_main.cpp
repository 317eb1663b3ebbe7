#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

#include "raptor/errors.hpp"
#include "raptor/listsched.hpp"
#include "raptor/log.hpp"
#include "raptor/manifest.hpp"
#include "raptor/proxy.hpp"
#include "raptor/simharness.hpp"

namespace {

using namespace raptor;

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::ConfigError, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::ConfigError, "cannot write '" + path + "'");
    out << content;
}

Endpoint parse_endpoint_arg(std::string s, uint16_t default_port) {
    if (s.rfind("http://", 0) == 0) s = s.substr(7);
    if (!s.empty() && s.back() == '/') s.pop_back();
    if (auto ep = Endpoint::parse(s)) return *ep;
    if (!s.empty() && s.find(':') == std::string::npos) return Endpoint{s, default_port};
    throw Error(Errc::ConfigError, "bad endpoint '" + s + "'");
}

std::string dag_to_dot(const TaskDag& dag) {
    std::string out = "digraph tasks {\n";
    for (const auto& n : dag.nodes()) out += "  \"" + n + "\";\n";
    for (const auto& [u, v] : dag.edges()) out += "  \"" + u + "\" -> \"" + v + "\";\n";
    out += "}\n";
    return out;
}

std::atomic<bool> g_shutdown{false};

void on_signal(int) { g_shutdown = true; } // async-signal-safe: flag only

int cmd_validate(const std::string& manifest_path) {
    ActionManifest m = parse_manifest(slurp(manifest_path));
    TaskDag dag = build_dag(m);
    std::cout << "ok: " << m.entries.size() << " functions, manifest_id "
              << m.manifest_id.substr(0, 16) << "\n";
    auto join = [](const std::vector<std::string>& v) {
        std::string s;
        for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
        return s;
    };
    std::cout << "sources: " << join(dag.sources()) << "\n";
    std::cout << "sinks: " << join(dag.sinks()) << "\n";
    return 0;
}

int cmd_schedule(const std::string& manifest_path, unsigned offset,
                 const std::vector<std::string>& mask_names, const std::string& dot_path) {
    ActionManifest m = parse_manifest(slurp(manifest_path));
    TaskDag dag = build_dag(m);
    if (!mask_names.empty()) {
        FunctionMask mask;
        mask.selected.insert(mask_names.begin(), mask_names.end());
        dag = apply_mask(dag, mask);
    }
    ListSchedule sched = build_schedule(dag, offset);
    std::string line;
    for (const auto& t : sched.order) line += (line.empty() ? "" : " ") + t;
    std::cout << line << "\n";
    if (!dot_path.empty()) spit(dot_path, dag_to_dot(dag));
    return 0;
}

int cmd_simulate(const std::string& config_path, const std::string& trace_path,
                 bool compare_modes) {
    SimConfig cfg = SimConfig::from_json(Json::parse(slurp(config_path)));
    if (compare_modes) {
        std::cout << comparison_to_csv(compare_coordinator(cfg));
        return 0;
    }
    SimResult res = run_sim(cfg);
    Json summary{{"job_latency_ms", res.job_latency_ms},
                 {"job_failed", res.job_failed},
                 {"job_output", res.job_output},
                 {"answering_member", res.answering_member},
                 {"messages_sent", res.messages_sent},
                 {"total_executions", res.total_executions()},
                 {"executions_per_task", res.executions_per_task}};
    std::cout << summary.dump(2) << "\n";
    if (!trace_path.empty()) {
        std::string csv = "t_ms,member,kind,task,detail\n";
        char buf[64];
        for (const auto& ev : res.trace) {
            std::snprintf(buf, sizeof buf, "%.6f", ev.t);
            csv += std::string(buf) + "," + std::to_string(ev.member) + "," + ev.kind + "," +
                   ev.task + "," + ev.detail + "\n";
        }
        spit(trace_path, csv);
    }
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out_path) {
    Json doc = Json::parse(slurp(config_path));
    if (!doc.is_object() || !doc.contains("sim"))
        throw Error(Errc::ConfigError, "sweep config needs a 'sim' object");
    SimConfig base = SimConfig::from_json(doc["sim"]);
    if (!doc.contains("p_values") || !doc["p_values"].is_array() || doc["p_values"].empty())
        throw Error(Errc::ConfigError, "sweep config needs non-empty 'p_values'");
    std::vector<double> p_values;
    for (const auto& p : doc["p_values"]) p_values.push_back(p.get<double>());
    int runs = doc.value("runs_per_point", 0);
    if (runs < 1) throw Error(Errc::ConfigError, "runs_per_point must be >= 1");
    auto rows = sweep_failure(base, p_values, runs);
    std::string csv = sweep_to_csv(rows);
    if (out_path.empty() || out_path == "-") {
        std::cout << csv;
    } else {
        spit(out_path, csv);
        std::cerr << "wrote " << rows.size() << " rows to " << out_path << "\n";
    }
    return 0;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

CsvTable read_csv(const std::string& path) {
    CsvTable t;
    std::istringstream in(slurp(path));
    std::string line;
    if (!std::getline(in, line)) throw Error(Errc::ConfigError, "empty csv");
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) t.header.push_back(cell);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::vector<double> row;
        while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
        if (row.size() == t.header.size()) t.rows.push_back(std::move(row));
    }
    return t;
}

std::string svg_chart(const CsvTable& t, size_t x_col, size_t y_col, const std::string& title,
                      const std::string& color) {
    const double w = 520, h = 320, ml = 60, mr = 20, mt = 40, mb = 40;
    double xmin = 1e300, xmax = -1e300, ymin = 0, ymax = -1e300;
    for (const auto& r : t.rows) {
        xmin = std::min(xmin, r[x_col]);
        xmax = std::max(xmax, r[x_col]);
        ymax = std::max(ymax, r[y_col]);
    }
    if (xmax <= xmin) xmax = xmin + 1;
    if (ymax <= ymin) ymax = ymin + 1;
    ymax *= 1.08;
    auto X = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
    auto Y = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };
    std::ostringstream s;
    s << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
    s << "<rect width='100%' height='100%' fill='white'/>\n";
    s << "<text x='" << w / 2 << "' y='24' text-anchor='middle' font-size='15'>" << title
      << "</text>\n";
    s << "<line x1='" << ml << "' y1='" << h - mb << "' x2='" << w - mr << "' y2='" << h - mb
      << "' stroke='black'/>\n";
    s << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << h - mb
      << "' stroke='black'/>\n";
    s << "<polyline fill='none' stroke='" << color << "' stroke-width='2' points='";
    for (const auto& r : t.rows) s << X(r[x_col]) << "," << Y(r[y_col]) << " ";
    s << "'/>\n";
    for (const auto& r : t.rows)
        s << "<circle cx='" << X(r[x_col]) << "' cy='" << Y(r[y_col]) << "' r='3' fill='" << color
          << "'/>\n";
    for (const auto& r : t.rows)
        s << "<text x='" << X(r[x_col]) << "' y='" << h - mb + 16
          << "' text-anchor='middle' font-size='10'>" << r[x_col] << "</text>\n";
    s << "<text x='14' y='" << mt - 10 << "' font-size='10'>" << t.header[y_col] << "</text>\n";
    s << "</svg>\n";
    return s.str();
}

int cmd_report(const std::string& in_path, const std::string& out_prefix) {
    CsvTable t = read_csv(in_path);
    auto col = [&](const std::string& name) -> size_t {
        for (size_t i = 0; i < t.header.size(); ++i)
            if (t.header[i] == name) return i;
        throw Error(Errc::ConfigError, "csv lacks column '" + name + "'");
    };
    size_t cp = col("p");
    size_t cl = col("mean_job_latency_ms");
    size_t cf = col("job_failure_rate");
    spit(out_prefix + "-latency.svg",
         svg_chart(t, cp, cl, "mean job latency vs task failure probability", "#1f6feb"));
    spit(out_prefix + "-failure.svg",
         svg_chart(t, cp, cf, "job failure rate vs task failure probability", "#d73a49"));
    std::cout << "p\tlatency_ms\tfailure_rate\n";
    for (const auto& r : t.rows)
        std::cout << r[cp] << "\t" << r[cl] << "\t" << r[cf] << "\n";
    std::cerr << "wrote " << out_prefix << "-latency.svg and " << out_prefix << "-failure.svg\n";
    return 0;
}

int cmd_serve(const std::string& listen, uint16_t peer_port, const std::string& controller,
              const std::string& advertise, const std::string& workdir, int term_kill_delay_ms,
              int niceness, bool has_niceness, int timeout_ms) {
    ProxyConfig cfg;
    Endpoint listen_ep = parse_endpoint_arg(listen.empty() ? "0.0.0.0:8080" : listen, 8080);
    cfg.listen_host = listen_ep.host;
    cfg.listen_port = listen_ep.port;
    cfg.peer_port = peer_port;
    cfg.advertise_host = advertise;
    if (!controller.empty()) cfg.controller = parse_endpoint_arg(controller, 80);
    if (!workdir.empty()) cfg.executor.workdir_root = workdir;
    cfg.executor.term_to_kill_delay = std::chrono::milliseconds(term_kill_delay_ms);
    if (has_niceness) cfg.executor.niceness = niceness;
    cfg.activation_timeout = std::chrono::milliseconds(timeout_ms);

    ProxyService svc(cfg);
    svc.start();
    std::cerr << "raptor proxy on " << cfg.listen_host << ":" << svc.http_port() << ", peer port "
              << svc.peer_port();
    if (cfg.controller)
        std::cerr << ", controller " << cfg.controller->str();
    else
        std::cerr << ", no controller (forks disabled; flights degrade to leader-only)";
    std::cerr << "\n";

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_shutdown.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    std::cerr << "shutting down\n";
    svc.stop();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"raptor: co-located distributed scheduler for DAG serverless workflows"};
    app.set_config("--config-file");
    app.require_subcommand(1);

    std::string log_level = "warn";
    app.add_option("--log-level", log_level, "debug|info|warn|error")->envname("RAPTOR_LOG_LEVEL");

    // serve
    auto* serve = app.add_subcommand("serve", "run the action proxy service");
    std::string listen = "0.0.0.0:8080";
    unsigned peer_port = 0;
    std::string controller;
    std::string advertise = "127.0.0.1";
    std::string workdir;
    int term_kill = 2000;
    int niceness = 0;
    int timeout_ms = 60000;
    serve->add_option("--listen", listen, "host:port for /init and /run")->envname("RAPTOR_LISTEN");
    serve->add_option("--peer-port", peer_port, "peer mesh port (0 = pick free)")
        ->envname("RAPTOR_PEER_PORT");
    serve->add_option("--controller", controller, "controller endpoint for follower forks")
        ->envname("RAPTOR_CONTROLLER");
    serve->add_option("--advertise", advertise, "address peers use to reach this instance");
    serve->add_option("--workdir", workdir, "root for ephemeral working directories");
    serve->add_option("--term-kill-delay-ms", term_kill, "delay between SIGTERM and SIGKILL")
        ->envname("RAPTOR_TERM_KILL_DELAY_MS");
    auto* nice_opt = serve->add_option("--niceness", niceness, "nice value for task processes");
    serve->add_option("--activation-timeout-ms", timeout_ms, "per-activation watchdog");

    // validate
    auto* validate = app.add_subcommand("validate", "parse and check a manifest document");
    std::string manifest_path;
    validate->add_option("manifest", manifest_path, "manifest JSON path")->required();

    // schedule
    auto* schedule = app.add_subcommand("schedule", "print a member's list schedule");
    std::string sched_manifest;
    unsigned offset = 0;
    std::vector<std::string> mask_names;
    std::string dot_path;
    schedule->add_option("manifest", sched_manifest, "manifest JSON path")->required();
    schedule->add_option("--offset", offset, "member offset (0 = leader)");
    schedule->add_option("--mask", mask_names, "function mask entries");
    schedule->add_option("--dot", dot_path, "write the (masked) DAG as DOT");

    // simulate
    auto* simulate = app.add_subcommand("simulate", "run one deterministic simulation");
    std::string sim_config;
    std::string trace_path;
    bool compare_modes = false;
    simulate->add_option("--config", sim_config, "simulation config JSON")->required();
    simulate->add_option("--trace", trace_path, "write the event trace CSV");
    simulate->add_flag("--compare-coordinator", compare_modes,
                       "compare flight vs coordinator composition instead");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "failure-probability sweep to CSV");
    std::string sweep_config;
    std::string sweep_out;
    sweep->add_option("--config", sweep_config, "sweep config JSON")->required();
    sweep->add_option("--out", sweep_out, "output CSV path (default stdout)");

    // report
    auto* report = app.add_subcommand("report", "render sweep CSV as SVG charts");
    std::string report_in;
    std::string report_out = "report";
    report->add_option("--in", report_in, "sweep CSV path")->required();
    report->add_option("--out", report_out, "output file prefix");

    CLI11_PARSE(app, argc, argv);

    if (log_level == "debug") raptor::log::set_level(raptor::log::Level::Debug);
    else if (log_level == "info") raptor::log::set_level(raptor::log::Level::Info);
    else if (log_level == "error") raptor::log::set_level(raptor::log::Level::Error);

    try {
        if (*validate) return cmd_validate(manifest_path);
        if (*schedule) return cmd_schedule(sched_manifest, offset, mask_names, dot_path);
        if (*simulate) return cmd_simulate(sim_config, trace_path, compare_modes);
        if (*sweep) return cmd_sweep(sweep_config, sweep_out);
        if (*report) return cmd_report(report_in, report_out);
        if (*serve)
            return cmd_serve(listen, static_cast<uint16_t>(peer_port), controller, advertise,
                             workdir, term_kill, niceness, nice_opt->count() > 0, timeout_ms);
    } catch (const raptor::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
