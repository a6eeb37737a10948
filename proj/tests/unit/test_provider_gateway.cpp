#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <memory>

#include "ragcap/conformance.hpp"
#include "ragcap/provider_gateway.hpp"
#include "ragcap/provider_server.hpp"
#include "support/fake_providers.hpp"
#include "support/test_support.hpp"

using namespace ragcap;
using ragcap::test::ScriptedProvider;

namespace {

double l2(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

std::vector<std::uint8_t> bytes_of(std::string_view s) { return {s.begin(), s.end()}; }

const std::string kPrompt =
    "I am an intelligent image captioning bot. Similar images have the following captions: "
    "a dog running on the grass</s> a brown dog playing in a park</s> a puppy with a ball</s> "
    "A creative short caption I can generate to describe this image in english is:";

}  // namespace

TEST(Base64, RoundTrip) {
  for (std::string s : {"", "f", "fo", "foo", "foob", "fooba", "foobar"}) {
    const auto b = bytes_of(s);
    EXPECT_EQ(base64_decode(base64_encode(b)), b);
  }
  EXPECT_EQ(base64_encode(bytes_of("foobar")), "Zm9vYmFy");
  EXPECT_EQ(base64_encode(bytes_of("fo")), "Zm8=");
  EXPECT_THROW(base64_decode("abc"), InputError);
  EXPECT_THROW(base64_decode("a=bc"), InputError);
}

TEST(MockProvider, Manifest) {
  MockProvider p;
  EXPECT_EQ(p.manifest(), (ProviderManifest{"mock-v1", 64, "</s>"}));
}

TEST(MockProvider, TextEmbeddings) {
  Gateway g(std::make_shared<MockProvider>());
  const auto e = g.embed_texts({"a dog", "a dog", "a spreadsheet"});
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(e[0].values, e[1].values);
  EXPECT_NE(e[0].values, e[2].values);
  for (const auto& v : e) {
    EXPECT_EQ(v.dimension(), 64u);
    EXPECT_NEAR(l2(v.values), 1.0, 1e-5);
  }
}

TEST(MockProvider, ImageEmbeddingDeterministicAndDistinct) {
  Gateway g(std::make_shared<MockProvider>());
  const auto a = test::read_text(test::fixture("images/img00.png"));
  const auto b = test::read_text(test::fixture("images/img01.png"));
  const auto ea = g.embed_image(bytes_of(a));
  EXPECT_EQ(ea.values, g.embed_image(bytes_of(a)).values);
  EXPECT_NE(ea.values, g.embed_image(bytes_of(b)).values);
  EXPECT_NEAR(l2(ea.values), 1.0, 1e-5);
}

TEST(MockProvider, ImageBytesEqualToTextShareEmbedding) {
  Gateway g(std::make_shared<MockProvider>());
  const auto img = g.embed_image(bytes_of("a red car"));
  const auto txt = g.embed_texts({"a red car"});
  EXPECT_NEAR(dot(img.values, txt[0].values), 1.0, 1e-5);
}

TEST(MockProvider, GenerationShape) {
  Gateway g(std::make_shared<MockProvider>());
  for (std::size_t c : {1u, 2u, 3u}) {
    const auto cands = g.generate(kPrompt, {c, 3, 40, {}});
    ASSERT_EQ(cands.size(), c);
    for (std::size_t i = 1; i < cands.size(); ++i) EXPECT_GE(cands[i - 1].score, cands[i].score);
    for (const auto& cand : cands) {
      EXPECT_FALSE(cand.text.empty());
      EXPECT_EQ(cand.text.find("</s>"), std::string::npos);
    }
  }
}

TEST(MockProvider, LanguageChangesOutput) {
  Gateway g(std::make_shared<MockProvider>());
  std::string es = kPrompt;
  es.replace(es.rfind("english"), 7, "spanish");
  const auto a = g.generate(kPrompt, {});
  const auto b = g.generate(es, {});
  EXPECT_NE(a.front().text, b.front().text);
  EXPECT_EQ(b.front().text.rfind("[spanish] ", 0), 0u);
}

TEST(MockProvider, MaxNewTokensCapsWords) {
  Gateway g(std::make_shared<MockProvider>());
  for (const auto& c : g.generate(kPrompt, {3, 3, 2, {}})) {
    const auto words = std::count(c.text.begin(), c.text.end(), ' ') + 1;
    EXPECT_LE(words, 2);
  }
}

TEST(MockProvider, RecordsPrompts) {
  auto mock = std::make_shared<MockProvider>();
  Gateway g(mock);
  g.generate(kPrompt, {});
  ASSERT_EQ(mock->received_prompts().size(), 1u);
  EXPECT_EQ(mock->received_prompts()[0], kPrompt);
}

TEST(Gateway, BatchingIsTransparent) {
  auto p = std::make_shared<ScriptedProvider>();
  Gateway g(p);
  std::vector<std::string> texts;
  for (int i = 0; i < 300; ++i) texts.push_back("caption number " + std::to_string(i));
  const auto all = g.embed_texts(texts);
  EXPECT_EQ(p->embed_text_batch_sizes, (std::vector<std::size_t>{256, 44}));
  const auto first = g.embed_texts({texts.begin(), texts.begin() + 150});
  const auto second = g.embed_texts({texts.begin() + 150, texts.end()});
  ASSERT_EQ(all.size(), 300u);
  for (std::size_t i = 0; i < 150; ++i) {
    EXPECT_EQ(all[i].values, first[i].values);
    EXPECT_EQ(all[150 + i].values, second[i].values);
  }
}

TEST(Gateway, RenormalizesProviderVectors) {
  auto p = std::make_shared<ScriptedProvider>();
  p->on_embed_texts = [](auto v) {
    for (auto& row : v)
      for (auto& x : row) x *= 3.0f;
    return v;
  };
  Gateway g(p);
  const auto e = g.embed_texts({"a dog"});
  EXPECT_NEAR(l2(e[0].values), 1.0, 1e-6);
  EXPECT_NEAR(e[0].norm, 3.0, 1e-5);
}

TEST(Gateway, DimensionDriftIsHardError) {
  auto p = std::make_shared<ScriptedProvider>();
  p->on_embed_texts = [](auto v) {
    v[0].push_back(0.5f);
    return v;
  };
  Gateway g(p);
  EXPECT_THROW(g.embed_texts({"a dog"}), ProviderError);
}

TEST(Gateway, IncompleteManifest) {
  auto p = std::make_shared<ScriptedProvider>();
  p->on_manifest = [](ProviderManifest m) {
    m.eos_token.clear();
    return m;
  };
  Gateway g(p);
  EXPECT_THROW(g.manifest(), ProviderError);
}

TEST(Gateway, FewerThanCIsHardError) {
  auto p = std::make_shared<ScriptedProvider>();
  p->on_generate = [](GenerationResponse r) {
    r.candidates.pop_back();
    return r;
  };
  Gateway g(p);
  try {
    g.generate(kPrompt, {3, 3, 40, {}});
    FAIL();
  } catch (const ProviderError& e) {
    EXPECT_FALSE(e.retryable());
  }
}

TEST(Gateway, ExtraCandidatesSortedAndCut) {
  auto p = std::make_shared<ScriptedProvider>();
  p->on_generate = [](GenerationResponse r) {
    r.candidates = {{"low", -3.0}, {"best", -0.1}, {"mid", -1.0}, {"second", -0.5}};
    return r;
  };
  Gateway g(p);
  const auto c = g.generate(kPrompt, {2, 3, 40, {}});
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].text, "best");
  EXPECT_EQ(c[1].text, "second");
}

TEST(Gateway, StopTokenTruncation) {
  auto p = std::make_shared<ScriptedProvider>();
  p->on_generate = [](GenerationResponse r) {
    r.candidates = {{" a cat on a mat</s> I am an intelligent", -0.1}};
    return r;
  };
  Gateway g(p);
  EXPECT_EQ(g.generate(kPrompt, {1, 1, 40, {}})[0].text, "a cat on a mat");
}

TEST(Gateway, EchoMismatch) {
  auto p = std::make_shared<ScriptedProvider>();
  p->on_generate = [](GenerationResponse r) {
    r.echo = *r.echo + " ";
    return r;
  };
  Gateway g(p);
  EXPECT_THROW(g.generate(kPrompt, {}), ProviderError);
}

TEST(Gateway, ParamsValidated) {
  Gateway g(std::make_shared<MockProvider>());
  EXPECT_THROW(g.generate(kPrompt, {4, 3, 40, {}}), InputError);
  EXPECT_THROW(g.generate(kPrompt, {0, 3, 40, {}}), InputError);
  EXPECT_THROW(g.generate("", {}), InputError);
  EXPECT_THROW(g.embed_texts({}), InputError);
  EXPECT_THROW(g.embed_image(std::span<const std::uint8_t>{}), InputError);
}

TEST(Http, RoundTripMatchesInProcess) {
  ProviderServer server(std::make_shared<MockProvider>());
  server.start();
  Gateway remote(std::make_shared<HttpProvider>(server.url()));
  Gateway local(std::make_shared<MockProvider>());
  EXPECT_EQ(remote.manifest(), local.manifest());
  const auto tr = remote.embed_texts({"a dog", "un perro", "一只狗"});
  const auto tl = local.embed_texts({"a dog", "un perro", "一只狗"});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(tr[i].values, tl[i].values);
  const auto img = conformance_image();
  EXPECT_EQ(remote.embed_image(img).values, local.embed_image(img).values);
  const auto gr = remote.generate(kPrompt, {});
  const auto gl = local.generate(kPrompt, {});
  EXPECT_EQ(gr, gl);
}

TEST(Http, PathPrefix) {
  httplib::Server srv;
  srv.Get("/api/v1/manifest", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"provider_id":"p","embedding_dimension":8,"eos_token":"</s>"})", "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread t([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  HttpProvider p("http://127.0.0.1:" + std::to_string(port) + "/api/");
  EXPECT_EQ(p.manifest(), (ProviderManifest{"p", 8, "</s>"}));
  srv.stop();
  t.join();
}

TEST(Http, RetriesTransientFailures) {
  httplib::Server srv;
  std::atomic<int> calls{0};
  srv.Get("/v1/manifest", [&](const httplib::Request&, httplib::Response& res) {
    if (++calls < 3) {
      res.status = 503;
      res.set_content(R"({"error":"warming up"})", "application/json");
      return;
    }
    res.set_content(R"({"provider_id":"p","embedding_dimension":8,"eos_token":"</s>"})", "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread t([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  HttpProvider p("http://127.0.0.1:" + std::to_string(port), {std::chrono::milliseconds(2000), 3,
                                                               std::chrono::milliseconds(1)});
  EXPECT_EQ(p.manifest().provider_id, "p");
  EXPECT_EQ(calls.load(), 3);

  calls = -10;
  try {
    p.manifest();
    FAIL();
  } catch (const ProviderError& e) {
    EXPECT_TRUE(e.retryable());
  }
  EXPECT_EQ(calls.load(), -7);
  srv.stop();
  t.join();
}

TEST(Http, ClientErrorsAreNotRetried) {
  httplib::Server srv;
  std::atomic<int> calls{0};
  srv.Post("/v1/embed_text", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 400;
    res.set_content(R"({"error":"bad"})", "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread t([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  HttpProvider p("http://127.0.0.1:" + std::to_string(port), {std::chrono::milliseconds(2000), 3,
                                                               std::chrono::milliseconds(1)});
  try {
    p.embed_texts({"x"});
    FAIL();
  } catch (const ProviderError& e) {
    EXPECT_FALSE(e.retryable());
  }
  EXPECT_EQ(calls.load(), 1);
  srv.stop();
  t.join();
}

TEST(Http, UnreachableIsProviderError) {
  HttpProvider p("http://127.0.0.1:1", {std::chrono::milliseconds(200), 2, std::chrono::milliseconds(1)});
  EXPECT_THROW(p.manifest(), ProviderError);
  EXPECT_THROW(HttpProvider("https://example.org"), InputError);
}

TEST(Http, ServerMapsBadRequests) {
  ProviderServer server(std::make_shared<MockProvider>());
  server.start();
  httplib::Client cli("127.0.0.1", server.port());
  auto res = cli.Post("/v1/embed_text", "{\"nope\": 1}", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_TRUE(nlohmann::json::parse(res->body).contains("error"));
  res = cli.Post("/v1/embed_image", "{\"image_b64\": \"\"}", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 422);
}

TEST(Conformance, MockPassesInProcessAndOverHttp) {
  MockProvider local;
  for (const auto& c : run_conformance(local)) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;

  ProviderServer server(std::make_shared<MockProvider>());
  server.start();
  HttpProvider remote(server.url());
  const auto checks = run_conformance(remote);
  EXPECT_EQ(checks.size(), 5u);
  for (const auto& c : checks) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
}

TEST(Conformance, DetectsViolations) {
  ScriptedProvider p;
  p.on_generate = [](GenerationResponse r) {
    r.candidates.push_back({"extra</s>", 5.0});
    return r;
  };
  p.on_embed_texts = [](auto v) {
    v[0][0] += 1.0f;
    return v;
  };
  std::size_t failed = 0;
  for (const auto& c : run_conformance(p)) failed += c.passed ? 0 : 1;
  EXPECT_EQ(failed, 3u);
}
