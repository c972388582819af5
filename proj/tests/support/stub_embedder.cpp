// Standalone deterministic embedding service for local demos and manual
// testing of the CLI without a real encoder.

#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "support/stub_provider.hpp"

int main(int argc, char** argv) {
  CLI::App app{"stub embedding service (hash-based vectors)"};
  std::string host = "127.0.0.1", fixture;
  int port = 8099;
  std::size_t dim = 512;
  app.add_option("--host", host);
  app.add_option("--port", port);
  app.add_option("--dim", dim, "vector dim when no fixture is given");
  app.add_option("--fixture", fixture, "JSON {dim, texts: {text: [floats]}} pinning texts to vectors");
  CLI11_PARSE(app, argc, argv);

  try {
    auto provider = fixture.empty() ? promptscope::testing::StubEmbeddingProvider(dim)
                                    : promptscope::testing::StubEmbeddingProvider::from_fixture_file(fixture);
    promptscope::testing::StubEmbeddingService service(std::move(provider), host, port);
    std::cerr << "stub embedder on " << service.endpoint() << " dim " << service.provider().descriptor().dim << "\n";
    service.wait();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
