#pragma once

#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <string_view>
#include <thread>

#include "flakeless/bit_layout.hpp"
#include "flakeless/error.hpp"
#include "flakeless/generator.hpp"
#include "flakeless/identity.hpp"
#include "flakeless/iso8601.hpp"

// Only takes effect if httplib.h has not been included yet; the CMake target
// sets it for every translation unit.
#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 1024
#endif
#include "httplib.h"
#include "json.hpp"

namespace flakeless {

struct ServiceConfig {
  std::string bind_address = "0.0.0.0";
  int port = 8080;  // 0 binds an ephemeral port, see IdService::port()
  std::size_t worker_threads = 128;
  bool expose_source_ip = false;  // /stats hides the address unless asked
  std::ostream* access_log = nullptr;
};

/// HTTP front end for a single Generator.
///
///   GET /id               one decimal ID, text/plain
///   GET /id/batch?count=N N IDs, newline separated
///   GET /decode/{id}      fields of an ID under this service's layout and epoch
///   GET /healthz          "ok", or 503 after a terminal issuance error
///   GET /stats            generator counters and identity provenance
class IdService {
 public:
  IdService(ServiceConfig config, std::shared_ptr<Generator> generator, MachineIdentity identity)
      : config_(std::move(config)), generator_(std::move(generator)),
        identity_(std::move(identity)) {
    if (config_.port < 0 || config_.port > 65535) {
      throw Error(ErrorCode::kInvalidConfig,
                  "port must be in [1, 65535], got " + std::to_string(config_.port));
    }
    if (config_.worker_threads == 0) {
      throw Error(ErrorCode::kInvalidConfig, "worker_threads must be at least 1");
    }
    install_routes();
  }

  IdService(const IdService&) = delete;
  IdService& operator=(const IdService&) = delete;

  ~IdService() { stop(); }

  /// Binds the listening socket. Returns false if the address is unavailable.
  bool bind() {
    if (config_.port == 0) {
      bound_port_ = server_.bind_to_any_port(config_.bind_address);
    } else {
      bound_port_ = server_.bind_to_port(config_.bind_address, config_.port) ? config_.port : -1;
    }
    return bound_port_ > 0;
  }

  int port() const noexcept { return bound_port_; }

  /// Serves on the calling thread until stop().
  bool serve() { return server_.listen_after_bind(); }

  /// Serves on a background thread.
  void start() {
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  httplib::Server& http() noexcept { return server_; }

 private:
  static void send_error(httplib::Response& res, int status, std::string_view reason,
                         const std::string& message) {
    nlohmann::ordered_json body;
    body["error"] = reason;
    body["message"] = message;
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  // Issuance failures map to 503. Clock regressions beyond tolerance and an
  // exhausted timestamp field leave the node unfit to issue.
  void send_issue_error(httplib::Response& res, const Error& e) {
    if (e.code() == ErrorCode::kClockMovedBackwards ||
        e.code() == ErrorCode::kTimestampExhausted) {
      std::lock_guard lock(health_mutex_);
      terminal_reason_ = std::string(error_name(e.code()));
      unhealthy_.store(true, std::memory_order_relaxed);
    }
    send_error(res, 503, error_name(e.code()), e.what());
  }

  void mark_healthy() {
    if (!unhealthy_.load(std::memory_order_relaxed)) return;
    std::lock_guard lock(health_mutex_);
    terminal_reason_.clear();
    unhealthy_.store(false, std::memory_order_relaxed);
  }

  void install_routes() {
    server_.new_task_queue = [n = config_.worker_threads] { return new httplib::ThreadPool(n); };
    server_.set_keep_alive_max_count(100000);
    server_.set_keep_alive_timeout(5);
    // Small responses on keep-alive connections otherwise stall behind
    // delayed ACKs.
    server_.set_tcp_nodelay(true);

    if (config_.access_log) {
      server_.set_pre_routing_handler([](const httplib::Request&, httplib::Response&) {
        request_start() = std::chrono::steady_clock::now();
        return httplib::Server::HandlerResponse::Unhandled;
      });
      server_.set_logger([this](const httplib::Request& req, const httplib::Response& res) {
        const auto elapsed = std::chrono::duration_cast<std::chrono::microseconds>(
            std::chrono::steady_clock::now() - request_start());
        WallClock wall;
        std::string line = format_iso8601_utc(wall.now_millis()) + " " + req.method + " " +
                           req.path + " " + std::to_string(res.status) + " " +
                           std::to_string(elapsed.count()) + "us\n";
        std::lock_guard lock(log_mutex_);
        *config_.access_log << line << std::flush;
      });
    }

    server_.Get("/id", [this](const httplib::Request&, httplib::Response& res) {
      try {
        const std::uint64_t id = generator_->next_id();
        mark_healthy();
        res.set_content(std::to_string(id), "text/plain");
      } catch (const Error& e) {
        send_issue_error(res, e);
      }
    });

    server_.Get("/id/batch", [this](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_param("count")) {
        send_error(res, 400, "invalid_argument", "missing count parameter");
        return;
      }
      const std::string text = req.get_param_value("count");
      std::size_t count = 0;
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), count);
      if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size() || count == 0) {
        send_error(res, 400, "invalid_argument",
                   "count must be a positive integer, got '" + text + "'");
        return;
      }
      if (count > generator_->config().max_batch) {
        send_error(res, 400, error_name(ErrorCode::kBatchTooLarge),
                   "count " + text + " exceeds cap " +
                       std::to_string(generator_->config().max_batch));
        return;
      }
      try {
        const auto ids = generator_->next_batch(count);
        mark_healthy();
        std::string body;
        body.reserve(ids.size() * 20);
        for (std::size_t i = 0; i < ids.size(); ++i) {
          if (i > 0) body += '\n';
          body += std::to_string(ids[i]);
        }
        res.set_content(body, "text/plain");
      } catch (const Error& e) {
        send_issue_error(res, e);
      }
    });

    server_.Get(R"(/decode/([^/]*))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string text = req.matches[1];
      std::uint64_t id = 0;
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), id);
      if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
        send_error(res, 400, "invalid_argument", "'" + text + "' is not an unsigned 64-bit integer");
        return;
      }
      try {
        const auto& config = generator_->config();
        const IdParts parts = decompose(config.layout, id);
        nlohmann::ordered_json body;
        body["id"] = id;
        body["timestamp_offset_ms"] = parts.timestamp_offset;
        body["absolute_time"] = format_iso8601_utc(config.epoch_millis + parts.timestamp_offset);
        body["region"] = parts.region;
        body["machine_id"] = parts.machine_id;
        body["sequence"] = parts.sequence;
        res.set_content(body.dump(), "application/json");
      } catch (const Error& e) {
        send_error(res, 400, error_name(e.code()), e.what());
      }
    });

    server_.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(health_mutex_);
      if (terminal_reason_.empty()) {
        res.set_content("ok", "text/plain");
      } else {
        res.status = 503;
        res.set_content("unhealthy: " + terminal_reason_, "text/plain");
      }
    });

    server_.Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
      const GeneratorStats stats = generator_->stats();
      nlohmann::ordered_json body;
      body["ids_issued"] = stats.ids_issued;
      body["overflow_waits"] = stats.overflow_waits;
      body["regression_waits"] = stats.regression_waits;
      body["last_time"] = stats.last_time;
      body["sequence"] = stats.sequence;
      body["layout"] = generator_->layout().to_string();
      body["epoch_ms"] = generator_->config().epoch_millis;
      body["machine_id"] = identity_.machine_id;
      body["provider"] = provider_name(identity_.provider);
      body["derivation"] = derivation_name(identity_.derivation);
      if (identity_.fell_back_from) {
        body["fell_back_from"] = provider_name(*identity_.fell_back_from);
      }
      if (config_.expose_source_ip) body["source_ip"] = identity_.source_ip;
      res.set_content(body.dump(), "application/json");
    });
  }

  static std::chrono::steady_clock::time_point& request_start() {
    thread_local std::chrono::steady_clock::time_point start;
    return start;
  }

  ServiceConfig config_;
  std::shared_ptr<Generator> generator_;
  MachineIdentity identity_;
  httplib::Server server_;
  std::thread thread_;
  int bound_port_ = -1;

  std::mutex log_mutex_;
  std::mutex health_mutex_;
  std::atomic<bool> unhealthy_{false};
  std::string terminal_reason_;
};

}  // namespace flakeless
