#pragma once

#include <chrono>
#include <optional>
#include <string>

#include "flakeless/identity.hpp"
#include "httplib.h"

namespace flakeless {

/// Plain-HTTP metadata client. Instance metadata services are link-local
/// and unencrypted, so https URLs are reported as transport failures.
class HttpMetadataClient final : public MetadataClient {
 public:
  std::optional<HttpResult> get(const std::string& url, const HttpHeaders& headers,
                                std::chrono::milliseconds timeout) override {
    const std::string scheme = "http://";
    if (url.rfind(scheme, 0) != 0) return std::nullopt;
    const auto path_start = url.find('/', scheme.size());
    const std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

    httplib::Client client(origin);
    const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(timeout - seconds);
    client.set_connection_timeout(seconds.count(), micros.count());
    client.set_read_timeout(seconds.count(), micros.count());

    httplib::Headers request_headers;
    for (const auto& [name, value] : headers) request_headers.emplace(name, value);
    auto response = client.Get(path, request_headers);
    if (!response) return std::nullopt;
    return HttpResult{response->status, response->body};
  }
};

}  // namespace flakeless
