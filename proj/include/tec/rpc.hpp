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
#ifndef TEC_RPC_HPP_
#define TEC_RPC_HPP_

#include <atomic>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <thread>
#include <vector>

#include "tec/loop_ir.hpp"
#include "tec/vdla.hpp"

namespace tec {

/*
 * Measurement RPC: length-prefixed JSON over TCP. Every frame is a 4-byte
 * little-endian byte count followed by one JSON document. A worker greets
 * each connection with {"hello":{"device":"vdla-sim","version":1}}, then
 * answers requests {"id","program","target","repeats"} with
 * {"id","status":"ok"|"error","cost","detail"}.
 */

struct RemoteResult {
  bool transport_ok = false;  // false: worker unreachable, caller fall back
  bool ok = false;            // status == "ok"
  double cost = 0.0;
  std::string detail;
};

/*! \brief In-process measurement worker listening on a local TCP port. */
class WorkerServer {
 public:
  explicit WorkerServer(int port = 0);  // 0 picks an ephemeral port
  ~WorkerServer();
  WorkerServer(const WorkerServer&) = delete;
  WorkerServer& operator=(const WorkerServer&) = delete;

  int port() const { return port_; }
  // Stops accepting, severs any live connection, joins the thread. A client
  // mid-request observes a transport failure, not a hang.
  void stop();

 private:
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stop_{false};
  std::atomic<int> active_fd_{-1};  // connection being served, for stop()
  std::thread thr_;
};

/*!
 * \brief Round-robin client over a set of "host:port" workers.
 *
 * Connections are opened lazily and the hello frame is checked once per
 * connection. A transport failure is retried once on a fresh connection;
 * if that also fails the worker is dropped from rotation with a warning
 * and the result reports transport_ok=false so the caller can measure
 * in-process instead.
 */
class WorkerPool {
 public:
  explicit WorkerPool(std::vector<std::string> addrs,
                      std::ostream* warn = nullptr);
  ~WorkerPool();
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  bool empty() const;     // true when every worker has been dropped
  size_t alive() const;

  RemoteResult measure(const LoopProgram& p, const std::string& target,
                       int repeats, const PipelineConfig& cfg = {});

 private:
  struct Conn {
    std::string host;
    int port = 0;
    int fd = -1;
    bool dead = false;
  };
  bool ensure_connected(Conn* c);
  void drop(Conn* c, const std::string& why);

  std::vector<Conn> conns_;
  size_t next_ = 0;
  uint64_t request_id_ = 0;
  std::ostream* warn_ = nullptr;
};

}  // namespace tec

#endif  // TEC_RPC_HPP_
