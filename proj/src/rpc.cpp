/*
 * Copyright 2026 The tec Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "tec/rpc.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <ostream>
#include <string>

#include "tec/autotune.hpp"
#include "tec/error.hpp"
#include "tec/texpr.hpp"
#include "vendor/json.hpp"

namespace tec {

namespace {

constexpr uint32_t kMaxFrame = 64u << 20;

bool send_all(int fd, const void* buf, size_t n) {
  const char* p = static_cast<const char*>(buf);
  while (n > 0) {
    ssize_t w = ::send(fd, p, n, MSG_NOSIGNAL);
    if (w <= 0) return false;
    p += w;
    n -= (size_t)w;
  }
  return true;
}

bool recv_all(int fd, void* buf, size_t n) {
  char* p = static_cast<char*>(buf);
  while (n > 0) {
    ssize_t r = ::recv(fd, p, n, 0);
    if (r <= 0) return false;
    p += r;
    n -= (size_t)r;
  }
  return true;
}

bool send_frame(int fd, const nlohmann::json& j) {
  std::string s = j.dump();
  if (s.size() > kMaxFrame) return false;
  uint32_t len = (uint32_t)s.size();
  uint8_t hdr[4] = {(uint8_t)(len & 0xff), (uint8_t)((len >> 8) & 0xff),
                    (uint8_t)((len >> 16) & 0xff),
                    (uint8_t)((len >> 24) & 0xff)};
  return send_all(fd, hdr, 4) && send_all(fd, s.data(), s.size());
}

bool recv_frame(int fd, nlohmann::json* out) {
  uint8_t hdr[4];
  if (!recv_all(fd, hdr, 4)) return false;
  uint32_t len = (uint32_t)hdr[0] | ((uint32_t)hdr[1] << 8) |
                 ((uint32_t)hdr[2] << 16) | ((uint32_t)hdr[3] << 24);
  if (len > kMaxFrame) return false;
  std::string body(len, '\0');
  if (len > 0 && !recv_all(fd, body.data(), len)) return false;
  *out = nlohmann::json::parse(body, nullptr, false);
  return !out->is_discarded();
}

void set_timeouts(int fd) {
  timeval tv{};
  tv.tv_sec = 10;
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
}

// One connection: greet, then answer measurement requests until the peer
// hangs up, a frame fails, or the server is stopping.
void serve_connection(int fd, const std::atomic<bool>& stopping) {
  register_builtin_intrinsics();
  if (!send_frame(fd, {{"hello", {{"device", "vdla-sim"}, {"version", 1}}}}))
    return;
  nlohmann::json req;
  while (!stopping.load() && recv_frame(fd, &req)) {
    nlohmann::json resp;
    resp["id"] = req.is_object() ? req.value("id", "") : "";
    resp["cost"] = 0.0;
    resp["detail"] = "";
    try {
      LoopProgram p = program_from_json(req.at("program"));
      std::string target = req.value("target", "vdla");
      int repeats = req.value("repeats", 1);
      resp["cost"] = measure_program(p, target, PipelineConfig{}, repeats);
      resp["status"] = "ok";
    } catch (const Error& e) {
      resp["status"] = "error";
      resp["detail"] = e.what();
    } catch (const nlohmann::json::exception& e) {
      resp["status"] = "error";
      resp["detail"] = std::string("bad request: ") + e.what();
    }
    if (!send_frame(fd, resp)) break;
  }
}

}  // namespace

WorkerServer::WorkerServer(int port) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) fail(ErrorCode::kIOError, "worker socket() failed");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons((uint16_t)port);
  if (::bind(listen_fd_, (sockaddr*)&addr, sizeof(addr)) != 0 ||
      ::listen(listen_fd_, 8) != 0) {
    ::close(listen_fd_);
    fail(ErrorCode::kIOError,
         "worker cannot listen on port " + std::to_string(port));
  }
  socklen_t alen = sizeof(addr);
  ::getsockname(listen_fd_, (sockaddr*)&addr, &alen);
  port_ = ntohs(addr.sin_port);

  thr_ = std::thread([this] {
    while (!stop_.load()) {
      pollfd pf{listen_fd_, POLLIN, 0};
      int pr = ::poll(&pf, 1, 200);
      if (stop_.load()) break;
      if (pr <= 0 || (pf.revents & POLLIN) == 0) continue;
      int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) continue;
      set_timeouts(fd);
      active_fd_.store(fd);
      serve_connection(fd, stop_);
      active_fd_.store(-1);
      ::close(fd);
    }
  });
}

void WorkerServer::stop() {
  if (stop_.exchange(true)) return;
  // Sever the live connection so a client mid-request sees a failure now.
  int afd = active_fd_.load();
  if (afd >= 0) ::shutdown(afd, SHUT_RDWR);
  if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
  if (thr_.joinable()) thr_.join();
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
}

WorkerServer::~WorkerServer() { stop(); }

WorkerPool::WorkerPool(std::vector<std::string> addrs, std::ostream* warn)
    : warn_(warn) {
  for (const std::string& a : addrs) {
    Conn c;
    size_t colon = a.rfind(':');
    if (colon == std::string::npos)
      fail(ErrorCode::kIOError, "worker address needs host:port, got " + a);
    c.host = a.substr(0, colon);
    c.port = std::stoi(a.substr(colon + 1));
    conns_.push_back(std::move(c));
  }
}

WorkerPool::~WorkerPool() {
  for (Conn& c : conns_)
    if (c.fd >= 0) ::close(c.fd);
}

bool WorkerPool::empty() const { return alive() == 0; }

size_t WorkerPool::alive() const {
  size_t n = 0;
  for (const Conn& c : conns_)
    if (!c.dead) ++n;
  return n;
}

bool WorkerPool::ensure_connected(Conn* c) {
  if (c->fd >= 0) return true;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(c->host.c_str(), std::to_string(c->port).c_str(), &hints,
                    &res) != 0 ||
      res == nullptr)
    return false;
  int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  bool ok = fd >= 0 && ::connect(fd, res->ai_addr, res->ai_addrlen) == 0;
  ::freeaddrinfo(res);
  if (!ok) {
    if (fd >= 0) ::close(fd);
    return false;
  }
  set_timeouts(fd);
  nlohmann::json hello;
  if (!recv_frame(fd, &hello) || !hello.contains("hello") ||
      hello["hello"].value("device", "") != "vdla-sim" ||
      hello["hello"].value("version", 0) != 1) {
    ::close(fd);
    return false;
  }
  c->fd = fd;
  return true;
}

void WorkerPool::drop(Conn* c, const std::string& why) {
  if (c->fd >= 0) {
    ::close(c->fd);
    c->fd = -1;
  }
  c->dead = true;
  if (warn_ != nullptr)
    *warn_ << "warning: worker " << c->host << ':' << c->port << ' ' << why
           << "; measuring in-process\n";
}

RemoteResult WorkerPool::measure(const LoopProgram& p,
                                 const std::string& target, int repeats,
                                 const PipelineConfig& cfg) {
  // The wire format carries no pipeline parameters; remote workers measure
  // with the default accelerator configuration.
  (void)cfg;
  RemoteResult out;
  Conn* c = nullptr;
  for (size_t i = 0; i < conns_.size(); ++i) {
    Conn& cc = conns_[(next_ + i) % conns_.size()];
    if (!cc.dead) {
      c = &cc;
      next_ = (next_ + i + 1) % conns_.size();
      break;
    }
  }
  if (c == nullptr) return out;  // nobody left; caller measures locally

  nlohmann::json req = {{"id", std::to_string(++request_id_)},
                        {"program", program_to_json(p)},
                        {"target", target},
                        {"repeats", repeats}};
  nlohmann::json resp;
  bool got = false;
  for (int attempt = 0; attempt < 2 && !got; ++attempt) {
    if (!ensure_connected(c)) continue;
    if (send_frame(c->fd, req) && recv_frame(c->fd, &resp) &&
        resp.value("id", "") == req["id"].get<std::string>()) {
      got = true;
      break;
    }
    ::close(c->fd);  // retry once on a fresh connection
    c->fd = -1;
  }
  if (!got) {
    drop(c, "is unreachable");
    return out;
  }
  out.transport_ok = true;
  out.ok = resp.value("status", "error") == "ok";
  out.cost = resp.value("cost", 0.0);
  out.detail = resp.value("detail", "");
  return out;
}

}  // namespace tec
