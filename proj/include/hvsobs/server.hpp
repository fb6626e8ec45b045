#pragma once

#include <memory>
#include <string>

#include "hvsobs/error.hpp"
#include "hvsobs/study.hpp"

namespace hvsobs {

// HTTP front end for a StudyService.
//
//   POST /api/sessions                      {observer_id}
//   GET  /api/sessions/{sid}
//   GET  /api/sessions/{sid}/next
//   GET  /api/stacks/{token}/slices/{k}.png ?lo=&hi=
//   POST /api/sessions/{sid}/scores         {stack, score, presentations, elapsed_ms}
//   GET  /api/sessions/{sid}/results
//
// Errors are JSON {code, message}. The study UI bundle, when configured, is
// served from /.
class StudyServer {
 public:
  explicit StudyServer(StudyService& service);
  ~StudyServer();

  StudyServer(const StudyServer&) = delete;
  StudyServer& operator=(const StudyServer&) = delete;

  // Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

int http_status(ErrorCode code);

}  // namespace hvsobs
