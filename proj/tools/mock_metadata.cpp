// Serves canned AWS/GCP/Azure metadata responses on 127.0.0.1 for local
// experiments with `flakeless resolve`.

#include <iostream>

#include "CLI11.hpp"
#include "mock_metadata_server.hpp"

int main(int argc, char** argv) {
  CLI::App app{"mock instance metadata server"};
  flakeless::testing::MockMetadataServer::Options options;
  int port = 8169;
  app.add_option("--port", port)->capture_default_str();
  app.add_option("--aws-ip", options.aws_ip)->capture_default_str();
  app.add_option("--gcp-ip", options.gcp_ip)->capture_default_str();
  app.add_option("--azure-ip", options.azure_ip)->capture_default_str();
  app.add_option("--fail-first", options.failures_before_success, "answer 500 this many times");
  CLI11_PARSE(app, argc, argv);

  flakeless::testing::MockMetadataServer server(options);
  const std::string base = "http://127.0.0.1:" + std::to_string(port);
  std::cerr << "ECS_CONTAINER_METADATA_URI_V4=" << base << "/ecs\n"
            << "--gcp-metadata-url " << base
            << "/computeMetadata/v1/instance/network-interfaces/0/ip\n"
            << "--azure-metadata-url '" << base
            << "/metadata/instance/network/interface/0/ipv4/ipAddress/0/privateIpAddress"
               "?api-version=2021-02-01&format=text'\n";
  server.serve_forever(port);
  return 0;
}
