#pragma once

#include <stdexcept>
#include <string>
#include <thread>

#include "httplib.h"

namespace test {

// httplib server on an ephemeral loopback port, stopped on destruction.
struct LocalServer {
    httplib::Server server;
    std::thread thread;
    int port = -1;

    void start() {
        port = server.bind_to_any_port("127.0.0.1");
        if (port < 0) throw std::runtime_error("cannot bind a loopback port");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
    ~LocalServer() {
        server.stop();
        if (thread.joinable()) thread.join();
    }
};

}  // namespace test
