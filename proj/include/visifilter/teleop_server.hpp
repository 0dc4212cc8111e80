#pragma once
// WebSocket/HTTP front end for a TeleopSession.
//
// One thread runs the simulation at wall-clock rate and owns the session.
// One thread runs the Asio event loop (accept, HTTP, WebSocket I/O). They
// talk only through the inbound command queue and posted broadcast strings.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "visifilter/teleop.hpp"

namespace visifilter {

class PortBusy : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ServerOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8700;  // 0 picks a free port
  double broadcast_rate = 30.0;
  bool keep_trace = false;
};

namespace teleop_detail {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

class Hub;

class WsClient : public std::enable_shared_from_this<WsClient> {
 public:
  WsClient(tcp::socket socket, Hub& hub) : ws_(std::move(socket)), hub_(hub) {}

  void start(http::request<http::string_body> req);
  void send(std::shared_ptr<const std::string> frame);

 private:
  void read();
  void write_next();
  void close();

  websocket::stream<beast::tcp_stream> ws_;
  Hub& hub_;
  beast::flat_buffer buffer_;
  std::deque<std::shared_ptr<const std::string>> out_;
  bool open_ = false;
};

// Connected clients and the inbound queue. Only touched from the I/O thread,
// except the queue, which the sim thread drains under the mutex.
class Hub {
 public:
  Hub(int input_dim, std::string scenario_doc) : input_dim_(input_dim), scenario_doc_(std::move(scenario_doc)) {}

  void join(const std::shared_ptr<WsClient>& c) { clients_.insert(c); }
  void leave(const std::shared_ptr<WsClient>& c) { clients_.erase(c); }
  std::size_t client_count() const { return clients_.size(); }
  void clear() { clients_.clear(); }

  void broadcast(const std::shared_ptr<const std::string>& frame) {
    for (const auto& c : clients_) c->send(frame);
  }

  // Returns an error text for malformed frames, empty on success.
  std::string ingest(const std::string& text) {
    ParsedMessage m = parse_command(text, input_dim_);
    if (!m.command) return m.error;
    std::lock_guard lock(mu_);
    inbox_.push_back(std::move(*m.command));
    return {};
  }

  std::vector<Command> drain() {
    std::lock_guard lock(mu_);
    std::vector<Command> out(std::make_move_iterator(inbox_.begin()), std::make_move_iterator(inbox_.end()));
    inbox_.clear();
    return out;
  }

  const std::string& scenario_doc() const { return scenario_doc_; }

 private:
  int input_dim_;
  std::string scenario_doc_;
  std::set<std::shared_ptr<WsClient>> clients_;
  std::mutex mu_;
  std::deque<Command> inbox_;
};

inline void WsClient::start(http::request<http::string_body> req) {
  ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
  ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
    if (ec) return;
    self->open_ = true;
    self->hub_.join(self);
    self->read();
  });
}

inline void WsClient::read() {
  ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) {
      self->close();
      return;
    }
    const std::string text = beast::buffers_to_string(self->buffer_.data());
    self->buffer_.consume(self->buffer_.size());
    const std::string err = self->hub_.ingest(text);
    if (!err.empty()) self->send(std::make_shared<const std::string>(error_frame(err)));
    self->read();
  });
}

inline void WsClient::send(std::shared_ptr<const std::string> frame) {
  if (!open_) return;
  // A client that cannot keep up loses its oldest queued states.
  if (out_.size() >= 64) out_.erase(out_.begin() + 1);
  out_.push_back(std::move(frame));
  if (out_.size() == 1) write_next();
}

inline void WsClient::write_next() {
  ws_.text(true);
  ws_.async_write(asio::buffer(*out_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) {
      self->close();
      return;
    }
    self->out_.pop_front();
    if (!self->out_.empty()) self->write_next();
  });
}

inline void WsClient::close() {
  if (!open_) return;
  open_ = false;
  out_.clear();
  hub_.leave(shared_from_this());
}

// Reads one HTTP request: WebSocket upgrade on /ws, GET /scenario, else 404.
class HttpConn : public std::enable_shared_from_this<HttpConn> {
 public:
  HttpConn(tcp::socket socket, Hub& hub) : stream_(std::move(socket)), hub_(hub) {}

  void start() {
    stream_.expires_after(std::chrono::seconds(10));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (!ec) self->dispatch();
    });
  }

 private:
  void dispatch() {
    if (websocket::is_upgrade(req_)) {
      if (req_.target() == "/ws") {
        stream_.expires_never();
        std::make_shared<WsClient>(stream_.release_socket(), hub_)->start(std::move(req_));
        return;
      }
    }
    auto res = std::make_shared<http::response<http::string_body>>();
    res->version(req_.version());
    res->keep_alive(false);
    if (req_.method() == http::verb::get && req_.target() == "/scenario") {
      res->result(http::status::ok);
      res->set(http::field::content_type, "application/json");
      res->set(http::field::access_control_allow_origin, "*");
      res->body() = hub_.scenario_doc();
    } else {
      res->result(http::status::not_found);
      res->set(http::field::content_type, "text/plain");
      res->body() = "not found\n";
    }
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ignored;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
    });
  }

  beast::tcp_stream stream_;
  Hub& hub_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace teleop_detail

/// Teleoperation server. The constructor binds the port (PortBusy on failure);
/// start() launches the I/O and sim threads; stop() joins them.
class TeleopServer {
 public:
  TeleopServer(Scenario sc, ServerOptions opt = {})
      : opt_(std::move(opt)),
        session_(std::move(sc), opt_.keep_trace),
        hub_(session_.simulator().model().input_dim(), scenario_to_json(session_.simulator().scenario()).dump(2)),
        acceptor_(ioc_) {
    namespace asio = teleop_detail::asio;
    using teleop_detail::tcp;
    boost::system::error_code ec;
    const tcp::endpoint ep(asio::ip::make_address(opt_.address, ec), opt_.port);
    if (ec) throw std::invalid_argument("bad listen address '" + opt_.address + "'");
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(asio::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(asio::socket_base::max_listen_connections, ec);
    if (ec) throw PortBusy("cannot listen on " + opt_.address + ":" + std::to_string(opt_.port) + ": " + ec.message());
    port_ = acceptor_.local_endpoint().port();
  }

  ~TeleopServer() { stop(); }

  TeleopServer(const TeleopServer&) = delete;
  TeleopServer& operator=(const TeleopServer&) = delete;

  unsigned short port() const { return port_; }

  void start() {
    if (started_) return;
    started_ = true;
    accept();
    io_thread_ = std::thread([this] { ioc_.run(); });
    sim_thread_ = std::thread([this] { sim_loop(); });
  }

  /// Blocks until stop() is called from another thread or a signal handler.
  void run() {
    start();
    std::unique_lock lock(wait_mu_);
    wait_cv_.wait(lock, [this] { return stopping_.load(); });
  }

  void stop() {
    {
      std::lock_guard lock(wait_mu_);
      stopping_.store(true);
    }
    wait_cv_.notify_all();
    if (sim_thread_.joinable()) sim_thread_.join();
    ioc_.stop();
    if (io_thread_.joinable()) io_thread_.join();
    hub_.clear();  // client sockets must go before the io_context
  }

  std::int64_t ticks() const { return ticks_.load(); }

  // Valid after stop().
  const TeleopSession& session() const { return session_; }

 private:
  void accept() {
    acceptor_.async_accept([this](boost::system::error_code ec, teleop_detail::tcp::socket socket) {
      if (ec) return;
      std::make_shared<teleop_detail::HttpConn>(std::move(socket), hub_)->start();
      accept();
    });
  }

  void sim_loop() {
    using clock = std::chrono::steady_clock;
    const double dt = session_.simulator().scenario().filter.dt;
    const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(dt));
    auto next = clock::now();
    while (!stopping_.load() && !session_.finished()) {
      for (const Command& c : hub_.drain()) session_.submit(c);
      const TraceRecord rec = session_.tick();
      ticks_.store(session_.simulator().tick());
      if (is_event_tick(rec.tick, dt, opt_.broadcast_rate)) {
        auto frame = std::make_shared<const std::string>(session_.state_message(rec).dump());
        teleop_detail::asio::post(ioc_, [this, frame] { hub_.broadcast(frame); });
      }
      next += period;
      std::this_thread::sleep_until(next);
    }
  }

  ServerOptions opt_;
  TeleopSession session_;
  teleop_detail::Hub hub_;
  teleop_detail::asio::io_context ioc_;
  teleop_detail::tcp::acceptor acceptor_;
  unsigned short port_ = 0;
  bool started_ = false;
  std::atomic<bool> stopping_{false};
  std::atomic<std::int64_t> ticks_{0};
  std::mutex wait_mu_;
  std::condition_variable wait_cv_;
  std::thread io_thread_;
  std::thread sim_thread_;
};

}  // namespace visifilter
