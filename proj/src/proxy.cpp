#include "raptor/proxy.hpp"

#include <fstream>

#include "httplib.h"

#include "raptor/archive.hpp"
#include "raptor/errors.hpp"
#include "raptor/log.hpp"

namespace raptor {

namespace fs = std::filesystem;

struct HttpServerState {
    httplib::Server server;
    std::thread thread;
};

ProxyService::ProxyService(ProxyConfig cfg)
    : cfg_(std::move(cfg)), transport_(cfg_.peering_timeout) {
    counting_transport_ = std::make_unique<CountingTransport>(transport_, peer_messages_);
}

ProxyService::~ProxyService() { stop(); }

uint16_t ProxyService::peer_port() const { return peer_server_.port(); }

Endpoint ProxyService::advertised_peer_endpoint() const {
    return Endpoint{cfg_.advertise_host, peer_server_.port()};
}

void ProxyService::start() {
    peer_server_.start(cfg_.listen_host, cfg_.peer_port, [this](WireMessage msg) {
        on_peer_message(std::move(msg));
    });

    http_ = std::make_unique<HttpServerState>();
    auto& svr = http_->server;

    // REUSEADDR only: a second instance on the same port must fail loudly
    // instead of silently sharing accepts via REUSEPORT
    svr.set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes),
                   sizeof yes);
    });

    svr.Post("/init", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            Json payload = Json::parse(req.body);
            Json out = handle_init(payload);
            res.set_content(out.dump(), "application/json");
        } catch (const Error& e) {
            res.status = 400;
            res.set_content(Json{{"error", e.what()}}.dump(), "application/json");
        } catch (const std::exception& e) {
            res.status = 400;
            res.set_content(Json{{"error", e.what()}}.dump(), "application/json");
        }
    });
    svr.Post("/run", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            Json payload = Json::parse(req.body);
            Json out = handle_run(payload);
            if (out.is_object() && out.contains("error") && out["error"] == "ActivationTimeout")
                res.status = 502;
            res.set_content(out.dump(), "application/json");
        } catch (const Error& e) {
            res.status = e.code() == Errc::NotInitialized ? 403 : 400;
            res.set_content(Json{{"error", e.what()}}.dump(), "application/json");
        } catch (const std::exception& e) {
            res.status = 400;
            res.set_content(Json{{"error", e.what()}}.dump(), "application/json");
        }
    });
    svr.Get("/health", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("{\"ok\":true}", "application/json");
    });

    if (cfg_.listen_port == 0) {
        int port = svr.bind_to_any_port(cfg_.listen_host);
        if (port <= 0) throw Error(Errc::BindFailure, "cannot bind HTTP listener");
        http_port_ = static_cast<uint16_t>(port);
    } else {
        if (!svr.bind_to_port(cfg_.listen_host, cfg_.listen_port))
            throw Error(Errc::BindFailure,
                        "cannot bind " + cfg_.listen_host + ":" + std::to_string(cfg_.listen_port));
        http_port_ = cfg_.listen_port;
    }
    http_->thread = std::thread([this] { http_->server.listen_after_bind(); });
    svr.wait_until_ready();
}

void ProxyService::stop() {
    if (stopping_.exchange(true)) return;
    // wake parked activation loops first so the handlers the HTTP stop joins
    // can preempt their work and answer promptly
    queue_cv_.notify_all();
    if (http_) {
        http_->server.stop();
        if (http_->thread.joinable()) http_->thread.join();
    }
    // direct handle_run callers are not joined by the HTTP server; wait for
    // them to observe the stop flag and unwind
    {
        std::unique_lock lock(queue_mu_);
        queue_cv_.wait(lock, [this] { return active_runs_ == 0; });
    }
    peer_server_.stop();
    std::vector<std::thread> forks;
    {
        std::scoped_lock lock(fork_threads_mu_);
        forks.swap(fork_threads_);
    }
    for (auto& t : forks)
        if (t.joinable()) t.join();
}

bool ProxyService::initialized() const {
    std::shared_lock lock(init_mu_);
    return initialized_;
}

ProxyService::Stats ProxyService::stats() const {
    return Stats{peer_messages_.load(), forks_.load(), activations_.load()};
}

std::optional<ActivationRecord> ProxyService::activation_record(
    const std::string& activation_id) const {
    std::scoped_lock lock(records_mu_);
    auto it = records_.find(activation_id);
    if (it == records_.end()) return std::nullopt;
    return it->second;
}

Json ProxyService::handle_init(const Json& payload) {
    std::unique_lock lock(init_mu_);
    if (initialized_ && !cfg_.allow_reinit)
        throw Error(Errc::NotInitialized, "already initialized and re-init disabled");

    const Json& value = payload.contains("value") ? payload["value"] : payload;
    if (!value.is_object())
        throw Error(Errc::MalformedDocument, "/init payload must carry an object value");

    bool binary = value.contains("binary") && value["binary"].is_boolean() &&
                  value["binary"].get<bool>();
    if (!value.contains("code") || !value["code"].is_string())
        throw Error(Errc::MalformedDocument, "/init payload needs a string 'code'");
    const std::string code = value["code"].get<std::string>();

    ActionManifest manifest;
    bool legacy = false;
    if (value.contains("manifest")) {
        manifest = parse_manifest(value["manifest"]);
    } else {
        // legacy single-function init
        legacy = true;
        manifest = parse_manifest(Json{
            {"functions", Json::array({Json{{"name", "main"},
                                            {"location", "main"},
                                            {"dependencies", Json::array()}}})}});
    }

    fs::path root = cfg_.executor.workdir_root / "code" / std::to_string(init_serial_++);
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw Error(Errc::InvalidArchive, "cannot create code root: " + ec.message());

    try {
        if (binary) {
            auto bytes = base64_decode(code);
            if (!bytes) throw Error(Errc::InvalidArchive, "code archive is not valid base64");
            extract_archive(*bytes, root);
        } else {
            // inline source: a single file at the manifest's (single)
            // location, "main" for legacy requests
            std::string location = legacy ? "main" : manifest.entries.front().location;
            fs::create_directories((root / location).parent_path(), ec);
            std::ofstream out(root / location, std::ios::binary | std::ios::trunc);
            if (!out) throw Error(Errc::InvalidArchive, "cannot write inline source");
            out << code;
        }
        for (const auto& e : manifest.entries) {
            if (!fs::exists(root / e.location))
                throw Error(Errc::InvalidArchive,
                            "manifest location '" + e.location + "' missing from the archive");
        }
    } catch (...) {
        fs::remove_all(root, ec);
        throw;
    }

    std::string runtime = value.contains("runtime") && value["runtime"].is_string()
                              ? value["runtime"].get<std::string>()
                              : "sh";
    interpreter_ = interpreter_for_runtime(runtime);
    manifest_ = std::move(manifest);
    dag_ = build_dag(manifest_);
    code_root_ = root;
    legacy_pack_ = legacy;
    initialized_ = true;
    log::info("initialized pack " + manifest_.manifest_id.substr(0, 12) + " with " +
              std::to_string(manifest_.entries.size()) + " functions");
    return Json{{"ok", true},
                {"manifest_id", manifest_.manifest_id},
                {"functions", manifest_.entries.size()}};
}

Json ProxyService::handle_run(const Json& payload) {
    std::shared_lock lock(init_mu_);
    if (!initialized_) throw Error(Errc::NotInitialized, "no pack initialized; POST /init first");
    if (!payload.is_object() || !payload.contains("value"))
        throw Error(Errc::MalformedDocument, "/run payload needs a 'value'");
    const Json& user_value = payload["value"];

    ContextMetadata metadata;
    if (payload.contains("transport")) metadata = ContextMetadata::from_json(payload["transport"]);
    ExecutionContext ctx = infer_context(metadata, manifest_, advertised_peer_endpoint());
    ++activations_;
    return run_activation(ctx, user_value);
}

void ProxyService::record_event(ActivationRecord& rec, std::chrono::steady_clock::time_point t0,
                                const std::string& kind, const std::string& task, Json detail) {
    ActivationEvent ev;
    ev.t_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                  .count();
    ev.kind = kind;
    ev.task = task;
    ev.detail = std::move(detail);
    rec.events.push_back(std::move(ev));
}

void ProxyService::fork_followers(const std::vector<ExecutionContext>& followers,
                                  const Json& user_value) {
    if (followers.empty()) return;
    if (!cfg_.controller) {
        log::warn("no controller configured; flight degrades to leader-only");
        return;
    }
    Endpoint controller = *cfg_.controller;
    std::string path = cfg_.controller_invoke_path;
    for (const auto& f : followers) {
        ContextMetadata md;
        md.offset = f.offset;
        md.flight_size = f.flight_size;
        md.leader_address = f.leader_address;
        md.activation_id = f.activation_id;
        md.mask = std::vector<std::string>(f.mask.selected.begin(), f.mask.selected.end());
        Json body{{"value", user_value}, {"transport", md.to_json()}};
        ++forks_;
        std::scoped_lock lock(fork_threads_mu_);
        if (fork_threads_.size() > 64) {
            for (auto& t : fork_threads_)
                if (t.joinable()) t.join();
            fork_threads_.clear();
        }
        fork_threads_.emplace_back([controller, path, body = body.dump()] {
            // fire and forget: no retries, no response inspection
            if (!http_post_and_forget(controller, path, body, std::chrono::milliseconds(1000)))
                log::debug("fork dispatch to " + controller.str() + " failed");
        });
    }
}

void ProxyService::on_peer_message(WireMessage msg) {
    std::shared_ptr<ActivationRuntime> rt;
    {
        std::scoped_lock lock(registry_mu_);
        auto it = registry_.find(activation_of(msg));
        if (it != registry_.end()) rt = it->second;
    }
    if (!rt) {
        log::debug("peer message for unknown activation " + activation_of(msg) + " dropped");
        return;
    }
    {
        std::scoped_lock lock(queue_mu_);
        LoopEvent ev;
        ev.kind = LoopEvent::Kind::Message;
        ev.msg = std::move(msg);
        rt->queue.push_back(std::move(ev));
    }
    queue_cv_.notify_all();
}

Json ProxyService::run_activation(const ExecutionContext& ctx, const Json& user_value) {
    {
        std::scoped_lock lock(queue_mu_);
        ++active_runs_;
    }
    struct DrainGuard {
        ProxyService* svc;
        ~DrainGuard() {
            {
                std::scoped_lock lock(svc->queue_mu_);
                --svc->active_runs_;
            }
            svc->queue_cv_.notify_all();
        }
    } drain_guard{this};

    const auto t0 = std::chrono::steady_clock::now();
    const auto deadline = t0 + cfg_.activation_timeout;

    TaskDag masked = apply_mask(dag_, ctx.mask);
    ListSchedule schedule = build_schedule(masked, ctx.offset);

    auto rt = std::make_shared<ActivationRuntime>();
    rt->engine = std::make_unique<FlightEngine>(ctx, masked, schedule, advertised_peer_endpoint(),
                                                *counting_transport_);
    FlightEngine& engine = *rt->engine;
    {
        std::scoped_lock lock(registry_mu_);
        if (!registry_.emplace(ctx.activation_id, rt).second)
            throw Error(Errc::InvalidContext,
                        "activation " + ctx.activation_id + " is already running here");
    }

    ActivationRecord rec;
    rec.activation_id = ctx.activation_id;
    rec.offset = ctx.offset;
    record_event(rec, t0, "context", "",
                 Json{{"offset", ctx.offset},
                      {"flight_size", ctx.flight_size},
                      {"is_leader", ctx.is_leader},
                      {"schedule", schedule.order}});

    if (ctx.is_leader && ctx.flight_size > 1) {
        fork_followers(make_follower_contexts(ctx), user_value);
        record_event(rec, t0, "fork", "", Json{{"count", ctx.flight_size - 1}});
    }
    if (!ctx.is_leader) {
        engine.send_peering();
        record_event(rec, t0, "peering_sent", "", Json{{"leader", ctx.leader_address.str()}});
    }

    struct Running {
        std::shared_ptr<TaskProcess> proc;
        std::string task;
        uint64_t gen = 0;
        std::thread collector;
    };
    std::optional<Running> running;
    uint64_t gen_counter = 0;
    std::vector<std::shared_ptr<TaskProcess>> all_procs;
    std::vector<std::thread> side_threads;
    bool timed_out = false;

    auto start_task = [&](const std::string& task) {
        const FunctionEntry* entry = manifest_.find(task);
        engine.mark_running(task);
        Json input = legacy_pack_ ? user_value
                                  : Json{{"value", user_value},
                                         {"inputs", engine.gather_inputs(task)}};
        record_event(rec, t0, "task_start", task, Json{{"input", input}});
        ExecutorConfig exec_cfg = cfg_.executor;
        exec_cfg.code_root = code_root_;
        exec_cfg.interpreter = interpreter_;
        exec_cfg.collect_timeout = std::chrono::duration_cast<std::chrono::milliseconds>(
            cfg_.activation_timeout);
        uint64_t gen = ++gen_counter;
        std::shared_ptr<TaskProcess> proc;
        try {
            proc = std::make_shared<TaskProcess>(spawn_task(*entry, input, ctx, exec_cfg));
        } catch (const std::exception& e) {
            log::warn("spawn of '" + task + "' failed: " + std::string(e.what()));
            engine.complete_local(task, Json(), true);
            record_event(rec, t0, "terminal", task,
                         Json{{"status", "DoneLocal"}, {"is_error", true}, {"reason", e.what()}});
            return;
        }
        all_procs.push_back(proc);
        std::thread collector([this, rt, proc, task, gen, exec_cfg] {
            auto [result, failed] = proc->collect_result(exec_cfg);
            {
                std::scoped_lock lock(queue_mu_);
                LoopEvent ev;
                ev.kind = LoopEvent::Kind::LocalDone;
                ev.task = task;
                ev.gen = gen;
                ev.result = std::move(result);
                ev.failed = failed;
                rt->queue.push_back(std::move(ev));
            }
            queue_cv_.notify_all();
        });
        running = Running{proc, task, gen, std::move(collector)};
    };

    auto preempt_running = [&](bool async) {
        if (!running) return;
        auto proc = running->proc;
        record_event(rec, t0, "preempt_issued", running->task, Json());
        ExecutorConfig exec_cfg = cfg_.executor;
        auto do_preempt = [proc, exec_cfg] {
            try {
                proc->preempt(exec_cfg);
            } catch (const Error&) {
                // AlreadyExited: natural completion won the race
            }
        };
        if (async) {
            side_threads.emplace_back(do_preempt);
        } else {
            do_preempt();
        }
        if (running->collector.joinable()) {
            if (async) {
                side_threads.push_back(std::move(running->collector));
            } else {
                running->collector.join();
            }
        }
        running.reset();
    };

    auto teardown = [&] {
        preempt_running(false);
        for (auto& t : side_threads)
            if (t.joinable()) t.join();
        ExecutorConfig exec_cfg = cfg_.executor;
        for (auto& proc : all_procs) {
            if (!proc->reaped()) {
                try {
                    proc->preempt(exec_cfg);
                } catch (const Error&) {
                }
            }
            proc->cleanup_workdir();
        }
        // the whole activation's workdir tree goes away with the workflow
        std::error_code ec;
        fs::remove_all(cfg_.executor.workdir_root / sanitize_path_component(ctx.member_id()), ec);
        std::scoped_lock lock(registry_mu_);
        registry_.erase(ctx.activation_id);
    };

    try {
        while (!engine.is_job_complete()) {
            if (stopping_.load()) {
                timed_out = true;
                break;
            }
            if (!running) {
                if (auto task = engine.next_runnable()) {
                    start_task(*task);
                    continue;
                }
            }
            LoopEvent ev;
            {
                std::unique_lock lock(queue_mu_);
                if (rt->queue.empty() &&
                    queue_cv_.wait_until(lock, deadline, [&] {
                        return !rt->queue.empty() || stopping_.load();
                    }) == false) {
                    timed_out = true;
                    break;
                }
                if (rt->queue.empty()) continue; // stopping or spurious wake
                ev = std::move(rt->queue.front());
                rt->queue.pop_front();
            }

            if (ev.kind == LoopEvent::Kind::LocalDone) {
                if (!running || ev.gen != running->gen) continue; // stale attempt
                if (running->collector.joinable()) running->collector.join();
                std::string task = running->task;
                running.reset();
                engine.complete_local(task, ev.result, ev.failed);
                record_event(rec, t0, "terminal", task,
                             Json{{"status", "DoneLocal"}, {"is_error", ev.failed}});
            } else {
                bool was_terminal = false;
                std::string utask;
                if (const auto* u = std::get_if<StateUpdate>(&ev.msg)) {
                    utask = u->task;
                    was_terminal = engine.state().is_terminal(utask);
                }
                UpdateAction action = engine.deliver(ev.msg);
                if (!utask.empty())
                    record_event(rec, t0, "update_applied", utask,
                                 Json{{"action", update_action_name(action)}});
                if (action == UpdateAction::TerminateRunning && running && running->task == utask)
                    preempt_running(true);
                if (!utask.empty() && !was_terminal && engine.state().is_terminal(utask))
                    record_event(rec, t0, "terminal", utask,
                                 Json{{"status",
                                       task_status_name(engine.state().status.at(utask))}});
            }
        }
    } catch (...) {
        teardown();
        throw;
    }
    teardown();

    Json response;
    if (timed_out && !engine.is_job_complete()) {
        response = Json{{"error", "ActivationTimeout"}, {"activation_id", ctx.activation_id}};
        record_event(rec, t0, "timeout", "", Json());
    } else {
        Json sinks = engine.job_output();
        if (legacy_pack_) {
            response = sinks.begin() != sinks.end() ? sinks.begin().value() : Json();
        } else {
            response = sinks;
        }
        record_event(rec, t0, "job_complete", "", Json{{"output", sinks}});
    }
    rec.response = response;
    {
        std::scoped_lock lock(records_mu_);
        record_order_.push_back(ctx.activation_id);
        records_[ctx.activation_id] = std::move(rec);
        while (record_order_.size() > 128) {
            records_.erase(record_order_.front());
            record_order_.pop_front();
        }
    }
    return response;
}

} // namespace raptor
