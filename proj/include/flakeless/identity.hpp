#pragma once

#include <arpa/inet.h>
#include <ifaddrs.h>
#include <net/if.h>
#include <netinet/in.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "flakeless/error.hpp"
#include "flakeless/fnv1a.hpp"
#include "json.hpp"

extern char** environ;

namespace flakeless {

enum class Provider { kAwsEcs, kGcpCloudRunOrGke, kAzureAks, kGenericFallback };

enum class Derivation { kRawOctets, kSalted, kOverride };

constexpr std::string_view provider_name(Provider p) noexcept {
  switch (p) {
    case Provider::kAwsEcs: return "aws_ecs";
    case Provider::kGcpCloudRunOrGke: return "gcp_cloud_run_or_gke";
    case Provider::kAzureAks: return "azure_aks";
    case Provider::kGenericFallback: return "generic_fallback";
  }
  return "unknown";
}

constexpr std::string_view derivation_name(Derivation d) noexcept {
  switch (d) {
    case Derivation::kRawOctets: return "raw_octets";
    case Derivation::kSalted: return "salted";
    case Derivation::kOverride: return "override";
  }
  return "unknown";
}

struct MachineIdentity {
  std::uint16_t machine_id = 0;
  std::string source_ip;  // empty for explicit machine-id overrides
  Provider provider = Provider::kGenericFallback;
  Derivation derivation = Derivation::kRawOctets;
  // Set when a cloud provider was detected but its metadata service failed
  // and the local interface fallback supplied the address instead.
  std::optional<Provider> fell_back_from;
};

using EnvMap = std::map<std::string, std::string, std::less<>>;

inline EnvMap capture_environment() {
  EnvMap env;
  for (char** entry = environ; entry && *entry; ++entry) {
    std::string_view kv(*entry);
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) continue;
    env.emplace(std::string(kv.substr(0, eq)), std::string(kv.substr(eq + 1)));
  }
  return env;
}

// ---------------------------------------------------------------------------
// IPv4 parsing and machine-id derivation

using Ipv4Octets = std::array<std::uint8_t, 4>;

inline Ipv4Octets parse_ipv4(std::string_view text) {
  auto invalid = [&](const std::string& why) {
    return Error(ErrorCode::kInvalidAddress,
                 "invalid IPv4 address '" + std::string(text) + "': " + why);
  };
  if (text.find(':') != std::string_view::npos) {
    throw invalid(
        "IPv6 is not supported; machine ids are derived from the last two octets of a "
        "private IPv4 address");
  }
  Ipv4Octets octets{};
  std::size_t pos = 0;
  for (int i = 0; i < 4; ++i) {
    const std::size_t end = i < 3 ? text.find('.', pos) : text.size();
    if (end == std::string_view::npos) throw invalid("expected four dot-separated octets");
    const std::string_view field = text.substr(pos, end - pos);
    if (field.empty() || field.size() > 3 ||
        !std::all_of(field.begin(), field.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw invalid("octet '" + std::string(field) + "' is not a decimal number");
    }
    unsigned value = 0;
    std::from_chars(field.data(), field.data() + field.size(), value);
    if (value > 255) throw invalid("octet " + std::to_string(value) + " exceeds 255");
    octets[i] = static_cast<std::uint8_t>(value);
    pos = end + 1;
  }
  return octets;
}

/// (third octet << 8) | fourth octet.
inline std::uint16_t worker_id_from_ip(std::string_view ip) {
  const Ipv4Octets o = parse_ipv4(ip);
  return static_cast<std::uint16_t>((o[2] << 8) | o[3]);
}

/// FNV-1a 64 over ip 0x00 pod_uid 0x00 salt, reduced mod 2^16. Hides the
/// address from anyone reading IDs while staying reproducible across
/// implementations.
inline std::uint16_t salted_worker_id(std::string_view ip, std::string_view pod_uid,
                                      std::string_view salt) {
  parse_ipv4(ip);
  if (pod_uid.empty() || salt.empty()) {
    throw Error(ErrorCode::kEmptySaltOrUid, "salted machine ids need a non-empty pod uid and salt");
  }
  const std::uint64_t h =
      Fnv1a64{}.update(ip).update(std::uint8_t{0}).update(pod_uid).update(std::uint8_t{0})
          .update(salt).digest();
  return static_cast<std::uint16_t>(h & 0xFFFF);
}

// ---------------------------------------------------------------------------
// Environment detection and metadata retrieval

namespace env_var {
inline constexpr std::string_view kAwsExecutionEnv = "AWS_EXECUTION_ENV";
inline constexpr std::string_view kEcsMetadataUri = "ECS_CONTAINER_METADATA_URI_V4";
inline constexpr std::string_view kGcpService = "K_SERVICE";
inline constexpr std::string_view kAzureUserAgent = "AZURE_HTTP_USER_AGENT";
inline constexpr std::string_view kMachineId = "FLAKELESS_MACHINE_ID";
inline constexpr std::string_view kIpOverride = "FLAKELESS_IP_OVERRIDE";
inline constexpr std::string_view kSalt = "FLAKELESS_SALT";
inline constexpr std::string_view kPodUid = "FLAKELESS_POD_UID";
inline constexpr std::string_view kStrictResolution = "FLAKELESS_STRICT_RESOLUTION";
}  // namespace env_var

/// Checked in this order; the first variable present wins.
inline Provider detect_environment(const EnvMap& env) {
  if (env.contains(env_var::kAwsExecutionEnv)) return Provider::kAwsEcs;
  if (env.contains(env_var::kGcpService)) return Provider::kGcpCloudRunOrGke;
  if (env.contains(env_var::kAzureUserAgent)) return Provider::kAzureAks;
  return Provider::kGenericFallback;
}

// Provider metadata endpoints. These paths change over time, so they live here
// and can be overridden per resolution (tests point them at local mocks).
struct MetadataEndpoints {
  std::string gcp_ip_url =
      "http://metadata.google.internal/computeMetadata/v1/instance/network-interfaces/0/ip";
  std::string azure_ip_url =
      "http://169.254.169.254/metadata/instance/network/interface/0/ipv4/ipAddress/0/"
      "privateIpAddress?api-version=2021-02-01&format=text";
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

struct HttpResult {
  int status = 0;
  std::string body;
};

class MetadataClient {
 public:
  virtual ~MetadataClient() = default;
  /// std::nullopt signals a transport failure (refused, timed out, bad URL).
  virtual std::optional<HttpResult> get(const std::string& url, const HttpHeaders& headers,
                                        std::chrono::milliseconds timeout) = 0;
};

struct InterfaceAddress {
  std::string name;
  std::string address;
  bool ipv4 = true;
  bool loopback = false;
  bool up = true;
};

inline std::vector<InterfaceAddress> list_interfaces() {
  std::vector<InterfaceAddress> result;
  ifaddrs* head = nullptr;
  if (getifaddrs(&head) != 0) return result;
  for (ifaddrs* it = head; it; it = it->ifa_next) {
    if (!it->ifa_addr) continue;
    const int family = it->ifa_addr->sa_family;
    if (family != AF_INET && family != AF_INET6) continue;
    char buf[INET6_ADDRSTRLEN] = {};
    const void* raw = family == AF_INET
                          ? static_cast<const void*>(
                                &reinterpret_cast<const sockaddr_in*>(it->ifa_addr)->sin_addr)
                          : static_cast<const void*>(
                                &reinterpret_cast<const sockaddr_in6*>(it->ifa_addr)->sin6_addr);
    if (!inet_ntop(family, raw, buf, sizeof(buf))) continue;
    result.push_back({it->ifa_name, buf, family == AF_INET, (it->ifa_flags & IFF_LOOPBACK) != 0,
                      (it->ifa_flags & IFF_UP) != 0});
  }
  freeifaddrs(head);
  return result;
}

/// First usable IPv4 address, interfaces taken in ascending name order.
/// Loopback, link-local (169.254/16), down interfaces and IPv6 are skipped.
inline std::string select_fallback_address(std::span<const InterfaceAddress> interfaces) {
  std::vector<const InterfaceAddress*> sorted;
  for (const auto& entry : interfaces) sorted.push_back(&entry);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto* a, const auto* b) { return a->name < b->name; });
  for (const auto* entry : sorted) {
    if (!entry->ipv4 || entry->loopback || !entry->up) continue;
    Ipv4Octets octets;
    try {
      octets = parse_ipv4(entry->address);
    } catch (const Error&) {
      continue;
    }
    if (octets[0] == 127) continue;
    if (octets[0] == 169 && octets[1] == 254) continue;
    return entry->address;
  }
  throw Error(ErrorCode::kNoUsableAddress,
              "no non-loopback IPv4 address found on local interfaces");
}

struct ResolverConfig {
  EnvMap env;
  std::chrono::milliseconds metadata_timeout{1000};
  unsigned metadata_retries = 2;
  std::optional<std::string> salt;
  std::optional<std::string> pod_uid;
  std::optional<std::uint16_t> override_machine_id;
  std::optional<std::string> override_ip;
  bool strict = false;  // no interface fallback when cloud metadata fails
  MetadataEndpoints endpoints;
  std::function<std::vector<InterfaceAddress>()> interfaces = list_interfaces;

  /// Reads the FLAKELESS_* overrides out of `env` and keeps `env` for
  /// provider detection.
  static ResolverConfig from_env(EnvMap env) {
    ResolverConfig config;
    auto lookup = [&](std::string_view key) -> std::optional<std::string> {
      auto it = env.find(key);
      if (it == env.end()) return std::nullopt;
      return it->second;
    };
    if (auto value = lookup(env_var::kMachineId)) {
      unsigned parsed = 0;
      auto [ptr, ec] = std::from_chars(value->data(), value->data() + value->size(), parsed);
      if (ec != std::errc{} || ptr != value->data() + value->size() || value->empty() ||
          parsed > 0xFFFF) {
        throw Error(ErrorCode::kInvalidConfig, std::string(env_var::kMachineId) +
                                                   " must be an integer in [0, 65535], got '" +
                                                   *value + "'");
      }
      config.override_machine_id = static_cast<std::uint16_t>(parsed);
    }
    config.override_ip = lookup(env_var::kIpOverride);
    config.salt = lookup(env_var::kSalt);
    config.pod_uid = lookup(env_var::kPodUid);
    if (auto value = lookup(env_var::kStrictResolution)) {
      config.strict = *value == "1" || *value == "true" || *value == "yes";
    }
    config.env = std::move(env);
    return config;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline std::string get_with_retries(MetadataClient& client, const std::string& url,
                                    const HttpHeaders& headers, const ResolverConfig& config) {
  std::string last_failure = "no attempt made";
  for (unsigned attempt = 0; attempt <= config.metadata_retries; ++attempt) {
    auto response = client.get(url, headers, config.metadata_timeout);
    if (!response) {
      last_failure = "transport failure";
    } else if (response->status < 200 || response->status > 299) {
      last_failure = "HTTP " + std::to_string(response->status);
    } else {
      return response->body;
    }
  }
  throw Error(ErrorCode::kMetadataUnreachable,
              "metadata endpoint " + url + " unreachable after " +
                  std::to_string(config.metadata_retries + 1) + " attempts (" + last_failure +
                  ")");
}

inline std::string validated_ip(std::string_view body, std::string_view source) {
  std::string ip = trim(body);
  try {
    parse_ipv4(ip);
  } catch (const Error& e) {
    throw Error(ErrorCode::kMetadataMalformed,
                std::string(source) + " returned an unusable address: " + e.what());
  }
  return ip;
}

}  // namespace detail

inline std::string fetch_ip(Provider provider, const ResolverConfig& config,
                            MetadataClient& client) {
  switch (provider) {
    case Provider::kAwsEcs: {
      auto uri = config.env.find(env_var::kEcsMetadataUri);
      if (uri == config.env.end() || uri->second.empty()) {
        throw Error(ErrorCode::kMetadataUnreachable,
                    std::string(env_var::kEcsMetadataUri) + " is not set");
      }
      const std::string body = detail::get_with_retries(client, uri->second, {}, config);
      // Container metadata v4: Networks[0].IPv4Addresses[0]
      std::string ip;
      try {
        const auto doc = nlohmann::json::parse(body);
        ip = doc.at("Networks").at(0).at("IPv4Addresses").at(0).get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::kMetadataMalformed,
                    std::string("ECS task metadata lacks Networks[0].IPv4Addresses[0]: ") +
                        e.what());
      }
      return detail::validated_ip(ip, "ECS task metadata");
    }
    case Provider::kGcpCloudRunOrGke: {
      const std::string body = detail::get_with_retries(
          client, config.endpoints.gcp_ip_url, {{"Metadata-Flavor", "Google"}}, config);
      return detail::validated_ip(body, "GCP metadata server");
    }
    case Provider::kAzureAks: {
      const std::string body = detail::get_with_retries(
          client, config.endpoints.azure_ip_url, {{"Metadata", "true"}}, config);
      return detail::validated_ip(body, "Azure instance metadata service");
    }
    case Provider::kGenericFallback: {
      const auto interfaces = config.interfaces ? config.interfaces() : list_interfaces();
      return select_fallback_address(interfaces);
    }
  }
  throw Error(ErrorCode::kResolutionFailed, "unknown provider");
}

inline MachineIdentity resolve_machine_identity(const ResolverConfig& config,
                                                MetadataClient& client) {
  if (config.override_machine_id) {
    return {*config.override_machine_id, "", Provider::kGenericFallback, Derivation::kOverride,
            std::nullopt};
  }

  auto derive = [&](MachineIdentity identity) {
    if (config.salt && config.pod_uid) {
      identity.machine_id = salted_worker_id(identity.source_ip, *config.pod_uid, *config.salt);
      identity.derivation = Derivation::kSalted;
    } else {
      identity.machine_id = worker_id_from_ip(identity.source_ip);
      identity.derivation = Derivation::kRawOctets;
    }
    return identity;
  };

  try {
    if (config.override_ip) {
      return derive({0, *config.override_ip, Provider::kGenericFallback, {}, std::nullopt});
    }

    const Provider detected = detect_environment(config.env);
    try {
      return derive({0, fetch_ip(detected, config, client), detected, {}, std::nullopt});
    } catch (const Error& e) {
      const bool metadata_failure = e.code() == ErrorCode::kMetadataUnreachable ||
                                    e.code() == ErrorCode::kMetadataMalformed;
      if (!metadata_failure || config.strict || detected == Provider::kGenericFallback) throw;
    }
    return derive({0, fetch_ip(Provider::kGenericFallback, config, client),
                   Provider::kGenericFallback, {}, detected});
  } catch (const Error& e) {
    throw Error(ErrorCode::kResolutionFailed, e.cause(),
                std::string("machine identity resolution failed: ") +
                    std::string(error_name(e.code())) + ": " + e.what());
  }
}

}  // namespace flakeless
