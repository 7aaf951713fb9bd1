#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"

#include "corect/corect.hpp"
#include "corect/errors.hpp"
#include "corect/model.hpp"
#include "support/fixtures.hpp"

using namespace corect;
using corect::testing::random_tokens;
using corect::testing::random_vec;
using corect::testing::small_config;

namespace {

double max_stream_gap(const ResidualTrace& tr) {
  double gap = 0;
  for (int l = 1; l <= tr.layers(); ++l) {
    const auto li = static_cast<std::size_t>(l);
    for (std::size_t t = 0; t < tr.length(); ++t) {
      for (std::size_t i = 0; i < tr.h[li][t].size(); ++i) {
        gap = std::max(gap, std::abs(tr.h[li][t][i] - (tr.h[li - 1][t][i] + tr.a[li][t][i] + tr.u[li][t][i])));
      }
    }
  }
  return gap;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("corect_test_" + name);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

FactSpec one_fact(const TokenLayout& lay, double mem, double copy) {
  FactSpec f;
  f.subject = lay.first_subject() + 3;
  f.relation = lay.first_relation() + 1;
  f.parametric_answer = lay.first_object() + 5;
  f.memory_strength = mem;
  f.copy_strength = copy;
  return f;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  c.H = 3;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = small_config();
  c.vocab = 3;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = small_config();
  c.L = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("unhooked runs satisfy the additive stream identity") {
  std::mt19937_64 rng(31);
  for (int s = 0; s < 30; ++s) {
    ModelConfig c = small_config(1 + s % 4);
    c.activation = s % 2 ? Activation::gelu : Activation::relu;
    const ModelWeights w = random_model(c, static_cast<std::uint64_t>(s));
    const auto toks = random_tokens(rng, c, 1 + static_cast<std::size_t>(s) % 8);
    const ForwardResult r = forward_traced(w, toks);
    CHECK(max_stream_gap(r.trace) <= 1e-6);
    CHECK(r.trace.u == r.trace.u_clean);
    CHECK(r.trace.applied_patch.empty());
    CHECK(r.logits == r.trace.z_final.back());
  }
}

TEST_CASE("attention rows are causal distributions") {
  std::mt19937_64 rng(37);
  const ModelConfig c = small_config();
  const ModelWeights w = random_model(c, 4);
  const ForwardResult r = forward_traced(w, random_tokens(rng, c, 7));
  for (int l = 1; l <= c.L; ++l) {
    for (const Mat& A : r.trace.attn[static_cast<std::size_t>(l)]) {
      for (std::size_t q = 0; q < 7; ++q) {
        double s = 0;
        for (std::size_t k = 0; k < 7; ++k) {
          CHECK(A(q, k) >= 0.0);
          if (k > q) CHECK(A(q, k) == 0.0);
          s += A(q, k);
        }
        CHECK(std::abs(s - 1.0) <= 1e-6);
      }
    }
  }
}

TEST_CASE("later positions do not influence earlier ones") {
  std::mt19937_64 rng(41);
  const ModelConfig c = small_config();
  const ModelWeights w = random_model(c, 5);
  auto toks = random_tokens(rng, c, 6);
  const ForwardResult a = forward_traced(w, toks);
  toks[5] = (toks[5] + 1) % c.vocab;
  const ForwardResult b = forward_traced(w, toks);
  for (int l = 0; l <= c.L; ++l)
    for (std::size_t t = 0; t < 5; ++t) CHECK(a.trace.h[static_cast<std::size_t>(l)][t] == b.trace.h[static_cast<std::size_t>(l)][t]);
}

TEST_CASE("an FFN patch leaves earlier layers untouched") {
  std::mt19937_64 rng(43);
  const ModelConfig c = small_config(4);
  const ModelWeights w = random_model(c, 6);
  const auto toks = random_tokens(rng, c, 5);
  const ForwardResult clean = forward_traced(w, toks);
  for (int l = 1; l <= c.L; ++l) {
    HookSet hooks;
    hooks.ffn_patches[l] = random_vec(rng, static_cast<std::size_t>(c.d));
    const ForwardResult p = forward_traced(w, toks, hooks);
    for (int lp = 0; lp < l; ++lp) CHECK(p.trace.h[static_cast<std::size_t>(lp)] == clean.trace.h[static_cast<std::size_t>(lp)]);
    for (int lp = l; lp <= c.L; ++lp) CHECK(p.trace.h[static_cast<std::size_t>(lp)].back() != clean.trace.h[static_cast<std::size_t>(lp)].back());
    CHECK(p.logits != clean.logits);
    const auto li = static_cast<std::size_t>(l);
    CHECK(p.trace.u_clean[li].back() == clean.trace.u[li].back());
    CHECK(p.trace.applied_patch.at(l) == hooks.ffn_patches[l]);
    const Vec expect = add(clean.trace.u[li].back(), hooks.ffn_patches[l]);
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(p.trace.u[li].back()[i] == doctest::Approx(expect[i]));
    CHECK(max_stream_gap(p.trace) <= 1e-6);
  }
}

TEST_CASE("restoring clean states under embedding noise") {
  std::mt19937_64 rng(47);
  const ModelConfig c = small_config(4);
  const ModelWeights w = random_model(c, 7);
  const auto toks = random_tokens(rng, c, 6);
  const ForwardResult clean = forward_traced(w, toks);

  EmbedNoise noise;
  noise.begin = 1;
  noise.noise = {random_vec(rng, 16, 2.0), random_vec(rng, 16, 2.0)};
  HookSet hooks;
  hooks.embed_noise = noise;
  const ForwardResult corrupt = forward_traced(w, toks, hooks);
  CHECK(corrupt.trace.h[0][0] == clean.trace.h[0][0]);
  CHECK(corrupt.trace.h[0][1] != clean.trace.h[0][1]);
  CHECK(corrupt.trace.h[0][3] == clean.trace.h[0][3]);

  // restoring every position at layer 2 makes layers 2..L clean again
  for (std::size_t t = 0; t < toks.size(); ++t) hooks.restore_overrides[{2, t}] = clean.trace.h[2][t];
  const ForwardResult restored = forward_traced(w, toks, hooks);
  CHECK(restored.trace.h[1][1] != clean.trace.h[1][1]);
  for (int l = 2; l <= c.L; ++l) {
    for (std::size_t t = 0; t < toks.size(); ++t) {
      for (std::size_t i = 0; i < 16; ++i) {
        CHECK(restored.trace.h[static_cast<std::size_t>(l)][t][i] ==
              doctest::Approx(clean.trace.h[static_cast<std::size_t>(l)][t][i]).epsilon(1e-12));
      }
    }
  }
  for (std::size_t i = 0; i < restored.logits.size(); ++i) CHECK(restored.logits[i] == doctest::Approx(clean.logits[i]));
}

TEST_CASE("restoring only the noised positions at layer zero undoes the noise") {
  std::mt19937_64 rng(53);
  const ModelConfig c = small_config(3);
  const ModelWeights w = random_model(c, 8);
  const auto toks = random_tokens(rng, c, 5);
  const ForwardResult clean = forward_traced(w, toks);
  HookSet hooks;
  hooks.embed_noise = EmbedNoise{2, {random_vec(rng, 16, 3.0)}};
  hooks.restore_overrides[{0, 2}] = clean.trace.h[0][2];
  const ForwardResult r = forward_traced(w, toks, hooks);
  CHECK(r.logits == clean.logits);
}

TEST_CASE("the key/value cache reproduces the full pass") {
  std::mt19937_64 rng(59);
  for (int s = 0; s < 10; ++s) {
    const ModelConfig c = small_config(2 + s % 3);
    const ModelWeights w = random_model(c, 100 + static_cast<std::uint64_t>(s));
    const auto toks = random_tokens(rng, c, 7);
    const std::vector<TokenId> head(toks.begin(), toks.begin() + 4);
    const ForwardResult prefix = forward_traced(w, head);
    const ForwardResult cached = forward_traced(w, toks, {}, &prefix.trace);
    const ForwardResult full = forward_traced(w, toks);
    for (std::size_t i = 0; i < full.logits.size(); ++i) CHECK(cached.logits[i] == doctest::Approx(full.logits[i]).epsilon(1e-12));
    CHECK(max_stream_gap(cached.trace) <= 1e-6);
  }
}

TEST_CASE("cache misuse is rejected") {
  std::mt19937_64 rng(61);
  const ModelConfig c = small_config();
  const ModelWeights w = random_model(c, 9);
  const auto toks = random_tokens(rng, c, 5);
  std::vector<TokenId> other = toks;
  other[0] = (other[0] + 1) % c.vocab;
  const ForwardResult prefix = forward_traced(w, std::vector<TokenId>(other.begin(), other.begin() + 3));
  CHECK_THROWS_AS(forward_traced(w, toks, {}, &prefix.trace), ValidationError);
}

TEST_CASE("frozen channel with identity readout is linear in the patch") {
  std::mt19937_64 rng(67);
  const ModelConfig c = small_config(4);
  const ModelWeights w = random_model(c, 10);
  const auto toks = random_tokens(rng, c, 5);
  const ForwardResult base = forward_traced(w, toks);
  HookSet lin;
  lin.freeze_from = &base.trace;
  lin.readout = Readout::identity;
  const ForwardResult ref = forward_traced(w, toks, lin);
  for (int trial = 0; trial < 20; ++trial) {
    HookSet hooks = lin;
    Vec total(16, 0.0);
    for (int l = 1; l <= c.L; ++l) {
      if ((trial >> (l - 1)) & 1) {
        hooks.ffn_patches[l] = random_vec(rng, 16);
        axpy(1.0, hooks.ffn_patches[l], total);
      }
    }
    const ForwardResult p = forward_traced(w, toks, hooks);
    const Vec expect = matvec(w.W_U, total);
    for (std::size_t v = 0; v < expect.size(); ++v) CHECK(p.logits[v] - ref.logits[v] == doctest::Approx(expect[v]).epsilon(1e-9));
  }
}

TEST_CASE("online rectifier matches explicit projection patches") {
  std::mt19937_64 rng(71);
  const ModelConfig c = small_config(4);
  const ModelWeights w = random_model(c, 11);
  const auto toks = random_tokens(rng, c, 6);
  const Vec dir = random_vec(rng, 16);
  HookSet hooks;
  hooks.online = OnlineRectifier{dir, 0.7};
  const ForwardResult r = forward_traced(w, toks, hooks);
  for (int l = 1; l <= c.L; ++l) {
    const Vec& u = r.trace.u_clean[static_cast<std::size_t>(l)].back();
    if (dot(u, dir) < 0) {
      const Vec expect = make_patch(u, dir, 0.7);
      REQUIRE(r.trace.applied_patch.count(l) == 1);
      for (std::size_t i = 0; i < 16; ++i) CHECK(r.trace.applied_patch.at(l)[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    } else {
      CHECK(r.trace.applied_patch.count(l) == 0);
    }
  }
}

TEST_CASE("forward rejects bad inputs") {
  const ModelConfig c = small_config();
  const ModelWeights w = random_model(c, 12);
  CHECK_THROWS_AS(forward_traced(w, std::vector<TokenId>{}), ValidationError);
  CHECK_THROWS_AS(forward_traced(w, std::vector<TokenId>(9, 1)), ValidationError);
  CHECK_THROWS_AS(forward_traced(w, std::vector<TokenId>{1, 99}), ValidationError);
  HookSet bad;
  bad.ffn_patches[c.L + 1] = Vec(16, 0.0);
  CHECK_THROWS_AS(forward_traced(w, std::vector<TokenId>{1, 2}, bad), ValidationError);
  HookSet bad_pos;
  bad_pos.restore_overrides[{1, 5}] = Vec(16, 0.0);
  CHECK_THROWS_AS(forward_traced(w, std::vector<TokenId>{1, 2}, bad_pos), ValidationError);
  ModelWeights broken = w;
  broken.layer(1).W_up = Mat(3, 3);
  CHECK_THROWS_AS(broken.validate(), ValidationError);
}

TEST_CASE("implanted fact is recalled without context") {
  const ModelConfig c;
  const TokenLayout lay = TokenLayout::for_config(c);
  const FactSpec f = one_fact(lay, 4.0, 1.0);
  const ModelWeights w = implant_model(c, {f}, 3);
  CHECK(argmax(forward_traced(w, query_prompt(f.subject, f.relation)).logits) == f.parametric_answer);
}

TEST_CASE("copy path alone answers from context") {
  const ModelConfig c;
  const TokenLayout lay = TokenLayout::for_config(c);
  const FactSpec f = one_fact(lay, 0.0, 4.0);
  const ModelWeights w = implant_model(c, {f}, 3);
  const TokenId ctx_obj = lay.first_object() + 17;
  CHECK(argmax(forward_traced(w, context_prompt(ctx_obj, f.subject, f.relation)).logits) == ctx_obj);
}

TEST_CASE("without facts the objects are near-uniform") {
  const ModelConfig c;
  const TokenLayout lay = TokenLayout::for_config(c);
  const ModelWeights w = implant_model(c, {}, 3);
  const ForwardResult r = forward_traced(w, query_prompt(lay.first_subject(), lay.first_relation()));
  Vec obj(r.logits.begin() + lay.first_object(), r.logits.end());
  const ProbDist p = softmax(obj);
  CHECK(entropy(p) >= 0.95 * std::log(static_cast<double>(obj.size())));
}

TEST_CASE("implanted conflict is suppressed after reaching rank one") {
  const auto& set = corect::testing::conflict_set();
  int suppressed = 0;
  for (const auto& e : set.examples) {
    const ForwardResult r = forward_traced(set.weights, e.prompt.ctx_tokens);
    CHECK(argmax(forward_traced(set.weights, query_prompt(e.fact.subject, e.fact.relation)).logits) == e.parametric);
    if (argmax(r.logits) == e.parametric) ++suppressed;
  }
  CHECK(suppressed == static_cast<int>(set.examples.size()));
}

TEST_CASE("implant validation") {
  const ModelConfig c;
  const TokenLayout lay = TokenLayout::for_config(c);
  FactSpec f = one_fact(lay, 3.0, 1.0);
  FactSpec dup = f;
  dup.parametric_answer = lay.first_object();
  CHECK_THROWS_AS(implant_model(c, {f, dup}, 1), ValidationError);

  FactSpec bad_layers = f;
  bad_layers.copy_layer = 2;
  bad_layers.memory_layer = 2;
  CHECK_THROWS_AS(implant_model(c, {bad_layers}, 1), ValidationError);

  FactSpec bad_answer = f;
  bad_answer.parametric_answer = f.subject;
  CHECK_THROWS_AS(implant_model(c, {bad_answer}, 1), ValidationError);

  FactSpec bad_strength = f;
  bad_strength.memory_strength = -1;
  CHECK_THROWS_AS(implant_model(c, {bad_strength}, 1), ValidationError);

  ModelConfig narrow = c;
  narrow.d_ff = 4;
  std::vector<FactSpec> many;
  for (int i = 0; i < 3; ++i) {
    FactSpec g = f;
    g.subject = lay.first_subject() + i;
    many.push_back(g);
  }
  CHECK_THROWS_AS(implant_model(narrow, many, 1), CapacityError);

  ModelConfig tiny = c;
  tiny.d = 32;
  CHECK_THROWS_AS(implant_model(tiny, {f}, 1), CapacityError);
}

TEST_CASE("implant is deterministic in its seed") {
  const ModelConfig c;
  const TokenLayout lay = TokenLayout::for_config(c);
  const FactSpec f = one_fact(lay, 3.0, 1.0);
  CHECK(implant_model(c, {f}, 5) == implant_model(c, {f}, 5));
  CHECK(!(implant_model(c, {f}, 5) == implant_model(c, {f}, 6)));
}

TEST_CASE("weights round-trip bit-exactly") {
  const auto path = temp_file("roundtrip.bin");
  for (int s = 0; s < 3; ++s) {
    ModelConfig c = small_config(1 + s);
    c.activation = s == 1 ? Activation::gelu : Activation::relu;
    const ModelWeights w = random_model(c, 200 + static_cast<std::uint64_t>(s));
    save_weights(w, path);
    CHECK(load_weights(path) == w);
  }
  const ModelWeights imp = corect::testing::conflict_set().weights;
  save_weights(imp, path);
  CHECK(load_weights(path) == imp);
  std::filesystem::remove(path);
}

TEST_CASE("malformed weight files raise distinct errors") {
  const auto path = temp_file("malformed.bin");
  const ModelWeights w = random_model(small_config(), 13);
  save_weights(w, path);
  const std::string good = slurp(path);

  spit(path, good.substr(0, good.size() - 7));
  CHECK_THROWS_AS(load_weights(path), TruncationError);
  spit(path, good.substr(0, 10));
  CHECK_THROWS_AS(load_weights(path), TruncationError);

  std::string magic = good;
  magic[0] = 'X';
  spit(path, magic);
  CHECK_THROWS_AS(load_weights(path), FormatError);

  std::string version = good;
  version[4] = 9;
  spit(path, version);
  CHECK_THROWS_AS(load_weights(path), FormatError);

  spit(path, good + "extra");
  CHECK_THROWS_AS(load_weights(path), FormatError);

  // first tensor dim: after magic, version, 7 config words and the rank word
  std::string shape = good;
  shape[4 + 4 + 7 * 4 + 4] = static_cast<char>(shape[4 + 4 + 7 * 4 + 4] + 1);
  spit(path, shape);
  CHECK_THROWS_AS(load_weights(path), ShapeError);

  std::string rank = good;
  rank[4 + 4 + 7 * 4] = 3;
  spit(path, rank);
  CHECK_THROWS_AS(load_weights(path), ShapeError);

  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_weights(path), IoError);
}
