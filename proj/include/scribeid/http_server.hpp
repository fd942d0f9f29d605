#pragma once

// HTTP routes over an IdentificationService.

#include <memory>

#include "scribeid/service.hpp"

namespace httplib {
class Server;
}

namespace scribeid {

// GET /health, GET /model/info, POST /enroll, POST /identify and, with `dev`,
// POST /dev/echo (returns the request body byte for byte). Errors are
// {"error": {"code", "message", ...}} with a 4xx/5xx status.
std::unique_ptr<httplib::Server> make_server(IdentificationService& service, bool dev);

// Sets the spdlog level from SCRIBEID_LOG (trace|debug|info|warn|error|off).
void configure_logging();

}  // namespace scribeid
