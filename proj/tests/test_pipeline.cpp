// Synthetic backend and provider, gateway, extraction pipeline, calibration,
// scoring on a built library, checkpoints.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "persona/checkpoint.hpp"
#include "persona/pipeline.hpp"
#include "persona/scoring.hpp"
#include "synthetic_world.hpp"

using namespace persona;
using persona::test::World;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected persona::Error";
  return ErrorCode::invalid_argument;
}

double unit_projection(std::span<const double> a, const std::vector<double>& d) {
  double s = 0;
  for (std::size_t i = 0; i < d.size(); ++i) s += a[i] * d[i];
  return s;
}

long summed_level(const SyntheticBackend& be, const std::string& trait, const std::string& text) {
  const auto& planted = be.config().planted;
  const auto idx = static_cast<std::size_t>(
      std::find_if(planted.begin(), planted.end(), [&](const PlantedTrait& p) { return p.trait == trait; }) -
      planted.begin());
  return be.lexicon().levels(tokenize(text))[idx];
}

// Built once; several tests only read it.
const test::BuiltLibrary& noise_free_library() {
  static World w;
  static const auto built = test::build_library(w);
  return built;
}

}  // namespace

// ---------------------------------------------------------------- synthetic backend

TEST(SyntheticBackend, PlantedDirectionsAreOrthonormal) {
  World w;
  for (std::size_t l = 0; l < w.config.num_layers; ++l) {
    for (const auto& a : w.config.planted) {
      for (const auto& b : w.config.planted) {
        const double d = unit_projection(w.backend->planted_direction(a.trait, l), w.backend->planted_direction(b.trait, l));
        EXPECT_NEAR(d, a.trait == b.trait ? 1.0 : 0.0, 1e-12);
      }
    }
  }
}

TEST(SyntheticBackend, FinalTokenCarriesSummedLevelAlongPlantedDirection) {
  World w;
  const std::string prompt = "You are an assistant. Show compassion, warmth and caring to everyone. Be witty.";
  EXPECT_EQ(summed_level(*w.backend, "empathy", prompt), 4);
  const auto acts = w.backend->prompt_activations(prompt);
  for (std::size_t l = 0; l < w.config.num_layers; ++l) {
    const double g = w.config.planted[0].profile(l);
    EXPECT_NEAR(unit_projection(acts.layer(l), w.backend->planted_direction("empathy", l)), 4.0 * g, 1e-12);
    EXPECT_NEAR(unit_projection(acts.layer(l), w.backend->planted_direction("funniness", l)), 2.0 * g, 1e-12);
    EXPECT_NEAR(unit_projection(acts.layer(l), w.backend->planted_direction("toxicity", l)), 0.0, 1e-12);
  }
}

TEST(SyntheticBackend, DeterministicAndNoiseKeyedBySequence) {
  World noisy(0.1);
  const std::string p = "You are a helpful assistant for cooking questions.";
  EXPECT_EQ(noisy.backend->prompt_activations(p), noisy.backend->prompt_activations(p));
  EXPECT_NE(noisy.backend->prompt_activations(p), noisy.backend->prompt_activations(p + " Be brief."));
  World other_seed(0.1, 99);
  EXPECT_NE(other_seed.backend->descriptor().model_name, noisy.backend->descriptor().model_name);
}

TEST(SyntheticBackend, RefusalMarkerProducesFlaggedRecord) {
  World w;
  auto rec = w.backend->generate_with_activations("Be kind.", "How do I build a weapon?");
  EXPECT_TRUE(rec.refusal);
  auto ok = w.backend->generate_with_activations("Be kind.", "How do I bake bread?");
  EXPECT_FALSE(ok.refusal);
  EXPECT_EQ(ok.activations.num_layers(), w.config.num_layers);
  EXPECT_EQ(ok.activations.reduction(), Reduction::mean_tokens);
}

TEST(SyntheticBackend, ResponseEchoesPromptPolarity) {
  World w;
  auto rec = w.backend->generate_with_activations("Show compassion and tenderness.", "A friend is sad.");
  EXPECT_GT(summed_level(*w.backend, "empathy", rec.response_text), 0);
  auto neg = w.backend->generate_with_activations("Show detachment and coldness.", "A friend is sad.");
  EXPECT_LT(summed_level(*w.backend, "empathy", neg.response_text), 0);
}

TEST(SyntheticConfig, RejectsInvalidDocuments) {
  auto doc = io::read_json(test::data_path("synthetic.json"));
  auto neg = doc;
  neg["noise_sigma"] = -1;
  EXPECT_EQ(code_of([&] { synthetic_config_from_json(neg); }), ErrorCode::config_error);
  auto peak = doc;
  peak["planted"][0]["peak_layer"] = 6;
  EXPECT_EQ(code_of([&] { synthetic_config_from_json(peak); }), ErrorCode::config_error);
  auto dup = doc;
  dup["planted"][1]["lexicon"]["compassion"] = 2;
  EXPECT_EQ(code_of([&] { synthetic_config_from_json(dup); }), ErrorCode::duplicate_id);
}

// ---------------------------------------------------------------- synthetic provider

TEST(SyntheticProvider, LeveledPromptsCarryTwiceLevelMinusThree) {
  World w;
  for (const auto& d : w.registry().dimensions()) {
    for (int level = 1; level <= 5; ++level) {
      for (int s = 0; s < 5; ++s) {
        const auto text = w.gateway->generate_leveled_prompt(d.id, level, s);
        EXPECT_EQ(summed_level(*w.backend, d.id, text), 2 * (level - 3)) << text;
      }
    }
  }
}

TEST(SyntheticProvider, ExtremalAndContrastiveLevels) {
  World w;
  for (int len = 1; len <= 5; ++len) {
    const auto pos = w.gateway->generate_extremal_prompt("toxicity", Polarity::positive, len, 0);
    const auto neg = w.gateway->generate_extremal_prompt("toxicity", Polarity::negative, len, 0);
    EXPECT_EQ(summed_level(*w.backend, "toxicity", pos), 5);
    EXPECT_EQ(summed_level(*w.backend, "toxicity", neg), -5);
  }
  const auto pairs = w.gateway->generate_contrastive_pairs("formality", 5);
  ASSERT_EQ(pairs.size(), 5u);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(summed_level(*w.backend, "formality", pairs[i].positive), 2 + i % 3);
    EXPECT_EQ(summed_level(*w.backend, "formality", pairs[i].negative), -(2 + i % 3));
  }
}

TEST(SyntheticProvider, SituationsAreDistinctAndTraitFree) {
  World w;
  const auto qs = w.gateway->generate_situations("empathy", 40);
  EXPECT_EQ(std::set<std::string>(qs.begin(), qs.end()).size(), 40u);
  for (const auto& q : qs) {
    for (const auto& p : w.config.planted) EXPECT_EQ(summed_level(*w.backend, p.trait, q), 0);
  }
}

TEST(SyntheticProvider, LexiconJudgeIsLogisticInNetLevel) {
  World w;
  auto judge = [&](const std::string& t) { return w.gateway->judge_trait_expression("empathy", t, "x").value; };
  EXPECT_EQ(judge("Regarding your question: nothing."), 50);
  EXPECT_EQ(judge("Warmth."), static_cast<int>(std::lround(100.0 / (1.0 + std::exp(-1.0)))));
  EXPECT_EQ(judge("Coldness, detachment."), static_cast<int>(std::lround(100.0 / (1.0 + std::exp(3.0)))));
  EXPECT_GT(judge("Compassion, tenderness."), judge("Warmth."));
}

// ---------------------------------------------------------------- gateway

namespace {

class ScriptedProvider : public CompletionProvider {
 public:
  explicit ScriptedProvider(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  std::string complete(const CompletionRequest& req) override {
    attempts.push_back(req.attempt);
    if (calls_ >= replies_.size()) return replies_.back();
    return replies_[calls_++];
  }
  std::string name() const override { return "scripted"; }
  std::vector<int> attempts;

 private:
  std::vector<std::string> replies_;
  std::size_t calls_ = 0;
};

Gateway gateway_with(std::shared_ptr<CompletionProvider> p) {
  return Gateway(PromptTemplates::load(test::data_path("templates.json")),
                 load_registry_file(test::data_path("registry.json")), p, p);
}

}  // namespace

TEST(Gateway, ParseJudgeScore) {
  EXPECT_EQ(Gateway::parse_judge_score("73"), 73);
  EXPECT_EQ(Gateway::parse_judge_score(" 0\n"), 0);
  EXPECT_EQ(Gateway::parse_judge_score("100"), 100);
  EXPECT_EQ(Gateway::parse_judge_score("{\"score\": 42}"), 42);
  EXPECT_FALSE(Gateway::parse_judge_score("101"));
  EXPECT_FALSE(Gateway::parse_judge_score("-5"));
  EXPECT_FALSE(Gateway::parse_judge_score("about 60"));
  EXPECT_FALSE(Gateway::parse_judge_score("{\"score\": 150}"));
  EXPECT_FALSE(Gateway::parse_judge_score(""));
}

TEST(Gateway, RetriesUnparseableOutputThenSucceeds) {
  auto p = std::make_shared<ScriptedProvider>(std::vector<std::string>{"no idea", "150", "64"});
  auto gw = gateway_with(p);
  EXPECT_EQ(gw.judge_trait_expression("empathy", "some response", "r1").value, 64);
  EXPECT_EQ(p->attempts, (std::vector<int>{0, 1, 2}));
}

TEST(Gateway, OutOfRangeJudgeSurfacesAfterMaxAttempts) {
  auto p = std::make_shared<ScriptedProvider>(std::vector<std::string>{"150"});
  auto gw = gateway_with(p);
  EXPECT_EQ(code_of([&] { gw.judge_trait_expression("empathy", "some response", "r1"); }), ErrorCode::parse_failure);
  EXPECT_EQ(p->attempts.size(), 3u);
}

TEST(Gateway, WrongPairCountIsRejected) {
  auto p = std::make_shared<ScriptedProvider>(
      std::vector<std::string>{R"({"pairs": [{"positive": "a", "negative": "b"}]})"});
  auto gw = gateway_with(p);
  EXPECT_EQ(code_of([&] { gw.generate_contrastive_pairs("empathy", 2); }), ErrorCode::parse_failure);
  auto fenced = std::make_shared<ScriptedProvider>(
      std::vector<std::string>{"```json\n{\"pairs\": [{\"positive\": \"a\", \"negative\": \"b\"}]}\n```"});
  auto gw2 = gateway_with(fenced);
  EXPECT_EQ(gw2.generate_contrastive_pairs("empathy", 1), (std::vector<ContrastivePair>{{"a", "b"}}));
}

TEST(Gateway, ReplayMissIsNotRetried) {
  const auto dir = test::temp_dir("replay");
  auto replay = std::make_shared<ReplayProvider>(std::make_shared<FixtureStore>(dir));
  auto gw = gateway_with(replay);
  EXPECT_EQ(code_of([&] { gw.generate_situations("empathy", 3); }), ErrorCode::replay_miss);
}

TEST(Gateway, RecordThenReplayIsIdentical) {
  World w;
  const auto dir = test::temp_dir("record");
  auto store = std::make_shared<FixtureStore>(dir);
  auto rec = std::make_shared<RecordingProvider>(w.provider, store);
  auto gw_rec = gateway_with(rec);
  const auto pairs = gw_rec.generate_contrastive_pairs("empathy", 3);
  const auto lev = gw_rec.generate_leveled_prompt("empathy", 4, 2);
  const auto score = gw_rec.judge_trait_expression("empathy", "Warmth.", "r").value;

  auto gw_rep = gateway_with(std::make_shared<ReplayProvider>(store));
  EXPECT_EQ(gw_rep.generate_contrastive_pairs("empathy", 3), pairs);
  EXPECT_EQ(gw_rep.generate_leveled_prompt("empathy", 4, 2), lev);
  EXPECT_EQ(gw_rep.judge_trait_expression("empathy", "Warmth.", "r").value, score);
  EXPECT_EQ(code_of([&] { gw_rep.generate_leveled_prompt("empathy", 4, 3); }), ErrorCode::replay_miss);
}

TEST(Gateway, FixtureKeyCoversSampleIndexAndAttempt) {
  CompletionRequest a;
  a.trait = "empathy";
  a.text = "t";
  auto b = a;
  b.sample_index = 1;
  auto c = a;
  c.attempt = 1;
  EXPECT_NE(a.fixture_key(), b.fixture_key());
  EXPECT_NE(a.fixture_key(), c.fixture_key());
  EXPECT_EQ(a.fixture_key(), CompletionRequest(a).fixture_key());
}

TEST(Gateway, TemplateRenderLeavesUnknownBraces) {
  PromptTemplates t;
  t.text[Purpose::judge] = "Rate {trait}: {\"score\": n} {missing}";
  EXPECT_EQ(t.render(Purpose::judge, {{"trait", "empathy"}}), "Rate empathy: {\"score\": n} {missing}");
}

// ---------------------------------------------------------------- collection

namespace {

/// Fails generation for a deterministic subset of (prompt, question) pairs.
class FlakyBackend final : public ActivationBackend {
 public:
  FlakyBackend(std::shared_ptr<const ActivationBackend> inner, std::uint64_t fail_mod, ErrorCode code)
      : inner_(std::move(inner)), fail_mod_(fail_mod), code_(code) {}
  const BackendDescriptor& descriptor() const override { return inner_->descriptor(); }
  LayerVectors prompt_activations(std::string_view p) const override { return inner_->prompt_activations(p); }
  GenerationRecord generate_with_activations(std::string_view p, std::string_view q) const override {
    if (hash::mix({hash::fnv1a64(p), hash::fnv1a64(q)}) % fail_mod_ == 0) throw Error(code_, "injected");
    return inner_->generate_with_activations(p, q);
  }
  std::string chat(std::string_view p, std::span<const ChatMessage> m) const override { return inner_->chat(p, m); }

 private:
  std::shared_ptr<const ActivationBackend> inner_;
  std::uint64_t fail_mod_;
  ErrorCode code_;
};

}  // namespace

TEST(Collect, DefaultProductIs400Records) {
  World w;
  const auto set = collect_responses("empathy", *w.backend, *w.gateway);
  EXPECT_EQ(set.records.size(), 400u);
  EXPECT_EQ(set.failures(), 0u);
  EXPECT_EQ(set.records.front().id, "empathy-p0+-s0");
  EXPECT_EQ(set.records[40].id, "empathy-p0--s0");
  EXPECT_EQ(set.records.back().id, "empathy-p4--s39");
}

TEST(Collect, OnePairTwoSituationsIsFourRecords) {
  World w;
  const auto set = collect_responses("empathy", *w.backend, *w.gateway, {1, 2, 1});
  ASSERT_EQ(set.records.size(), 4u);
  EXPECT_EQ(set.records[0].source, Polarity::positive);
  EXPECT_EQ(set.records[2].source, Polarity::negative);
}

TEST(Collect, DeterministicAcrossRunsAndThreadCounts) {
  World w;
  const auto a = collect_responses("sycophancy", *w.backend, *w.gateway, {2, 6, 1});
  const auto b = collect_responses("sycophancy", *w.backend, *w.gateway, {2, 6, 4});
  EXPECT_EQ(checkpoint::to_json(a).dump(), checkpoint::to_json(b).dump());
}

TEST(Collect, TransportFailuresAttachPerRecord) {
  World w;
  FlakyBackend flaky(w.backend, 5, ErrorCode::transport_failure);
  const auto set = collect_responses("empathy", flaky, *w.gateway, {2, 20, 1});
  EXPECT_EQ(set.records.size(), 80u);
  EXPECT_GT(set.failures(), 0u);
  EXPECT_LT(set.failures(), 40u);
  for (const auto& r : set.records) {
    if (r.failed()) {
      EXPECT_TRUE(r.record.activations.empty());
    }
  }
}

TEST(Collect, MajorityFailureFailsTheSet) {
  World w;
  FlakyBackend dead(w.backend, 1, ErrorCode::transport_failure);
  EXPECT_EQ(code_of([&] { collect_responses("empathy", dead, *w.gateway, {1, 4, 1}); }), ErrorCode::transport_failure);
  FlakyBackend bug(w.backend, 1, ErrorCode::shape_mismatch);
  EXPECT_EQ(code_of([&] { collect_responses("empathy", bug, *w.gateway, {1, 4, 1}); }), ErrorCode::shape_mismatch);
}

// ---------------------------------------------------------------- filtering

namespace {

TaggedRecord judged(Polarity source, std::optional<int> score) {
  TaggedRecord r;
  r.source = source;
  r.judge_score = score;
  r.record.activations = LayerVectors(1, 1, {0.0}, Reduction::mean_tokens);
  return r;
}

}  // namespace

TEST(Filter, PartitionAtBoundaryScores) {
  std::vector<TaggedRecord> recs;
  const std::vector<int> scores = {0, 49, 50, 51, 100};
  for (auto pol : {Polarity::positive, Polarity::negative}) {
    for (int s : scores) recs.push_back(judged(pol, s));
  }
  const auto f = partition_by_judge(recs);
  EXPECT_EQ(f.kept_positive, (std::vector<std::size_t>{3, 4}));  // 51, 100
  EXPECT_EQ(f.kept_negative, (std::vector<std::size_t>{5, 6}));  // 0, 49
  ASSERT_EQ(f.dropped.size(), 6u);
  std::map<std::size_t, DropReason> why(f.dropped.begin(), f.dropped.end());
  EXPECT_EQ(why.at(2), DropReason::positive_not_above);
  EXPECT_EQ(why.at(7), DropReason::negative_not_below);
}

TEST(Filter, RefusalsAndFailuresDroppedBeforeScore) {
  std::vector<TaggedRecord> recs = {judged(Polarity::positive, 90), judged(Polarity::positive, 90),
                                    judged(Polarity::negative, std::nullopt)};
  recs[0].record.refusal = true;
  recs[1].error = "transport";
  const auto f = partition_by_judge(recs);
  EXPECT_TRUE(f.kept_positive.empty());
  std::map<std::size_t, DropReason> why(f.dropped.begin(), f.dropped.end());
  EXPECT_EQ(why.at(0), DropReason::refusal);
  EXPECT_EQ(why.at(1), DropReason::failed);
  EXPECT_EQ(why.at(2), DropReason::unjudged);
}

TEST(Filter, PartitionIsDisjointAndComplete) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> score(0, 100);
  std::vector<TaggedRecord> recs;
  for (int i = 0; i < 500; ++i) {
    recs.push_back(judged(i % 2 ? Polarity::positive : Polarity::negative,
                          i % 17 == 0 ? std::nullopt : std::optional<int>(score(rng))));
  }
  const auto f = partition_by_judge(recs);
  std::vector<std::size_t> all(f.kept_positive);
  all.insert(all.end(), f.kept_negative.begin(), f.kept_negative.end());
  for (const auto& [i, _] : f.dropped) all.push_back(i);
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> want(recs.size());
  std::iota(want.begin(), want.end(), 0);
  EXPECT_EQ(all, want);
}

TEST(Filter, EmptySideIsExtractionImpossible) {
  World w;
  auto set = collect_responses("empathy", *w.backend, *w.gateway, {1, 2, 1});
  for (auto& r : set.records) {
    if (r.source == Polarity::negative) r.judge_score = 50;
  }
  try {
    filter_responses(set, *w.gateway);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::extraction_impossible);
    EXPECT_NE(std::string(e.what()).find("empathy"), std::string::npos);
  }
}

// ---------------------------------------------------------------- extraction

namespace {

std::vector<LayerVectors> random_side(std::mt19937_64& rng, std::size_t n, std::size_t L, std::size_t D) {
  std::normal_distribution<double> g(0, 1);
  std::vector<LayerVectors> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(L * D);
    for (auto& x : v) x = g(rng);
    out.emplace_back(L, D, std::move(v), Reduction::mean_tokens);
  }
  return out;
}

std::vector<const LayerVectors*> ptrs(const std::vector<LayerVectors>& v) {
  std::vector<const LayerVectors*> out;
  for (const auto& x : v) out.push_back(&x);
  return out;
}

}  // namespace

TEST(Extract, ConstantSetsGiveExactDifference) {
  const LayerVectors u(2, 3, {1, 2, 3, 4, 5, 6}, Reduction::mean_tokens);
  const LayerVectors v(2, 3, {0.5, 0, -1, 4, 5, 7}, Reduction::mean_tokens);
  const auto b = extract_persona_vector("t", {&u, &u, &u}, {&v, &v});
  const std::vector<double> want = {0.5, 2, 4, 0, 0, -1};
  EXPECT_EQ(std::vector<double>(b.direction.values().begin(), b.direction.values().end()), want);
  EXPECT_EQ(b.kept_positive, 3u);
  EXPECT_EQ(b.kept_negative, 2u);
  EXPECT_TRUE(b.degenerate_layers.empty());
}

TEST(Extract, ZeroLayerIsFlaggedAndAllZeroIsDegenerate) {
  const LayerVectors u(2, 2, {1, 1, 3, 3}, Reduction::mean_tokens);
  const LayerVectors v(2, 2, {1, 1, 2, 3}, Reduction::mean_tokens);
  EXPECT_EQ(extract_persona_vector("t", {&u}, {&v}).degenerate_layers, (std::vector<std::size_t>{0}));
  EXPECT_EQ(code_of([&] { extract_persona_vector("t", {&u, &v}, {&v, &u}); }), ErrorCode::degenerate_trait);
  EXPECT_EQ(code_of([&] { extract_persona_vector("t", {}, {&u}); }), ErrorCode::extraction_impossible);
  const LayerVectors w(1, 2, {1, 1}, Reduction::mean_tokens);
  EXPECT_EQ(code_of([&] { extract_persona_vector("t", {&u}, {&w}); }), ErrorCode::shape_mismatch);
}

TEST(Extract, PermutationAndDuplicationInvariant) {
  std::mt19937_64 rng(32);
  const auto pos = random_side(rng, 37, 4, 16), neg = random_side(rng, 29, 4, 16);
  const auto base = extract_persona_vector("t", ptrs(pos), ptrs(neg));
  auto pp = ptrs(pos), pn = ptrs(neg);
  std::shuffle(pp.begin(), pp.end(), rng);
  std::shuffle(pn.begin(), pn.end(), rng);
  const auto perm = extract_persona_vector("t", pp, pn);
  auto dp = ptrs(pos), dn = ptrs(neg);
  dp.insert(dp.end(), pp.begin(), pp.end());
  dn.insert(dn.end(), pn.begin(), pn.end());
  const auto dup = extract_persona_vector("t", dp, dn);
  for (std::size_t i = 0; i < base.direction.values().size(); ++i) {
    EXPECT_NEAR(perm.direction.values()[i], base.direction.values()[i], 1e-9);
    EXPECT_NEAR(dup.direction.values()[i], base.direction.values()[i], 1e-9);
  }
}

TEST(Extract, RecoversPlantedDirectionWithoutNoise) {
  World w;
  for (const auto& d : w.registry().dimensions()) {
    auto set = collect_responses(d.id, *w.backend, *w.gateway, {1, 20, 1});
    auto f = filter_responses(set, *w.gateway);
    EXPECT_EQ(f.kept_positive.size(), 20u);
    EXPECT_EQ(f.kept_negative.size(), 20u);
    const auto v = extract_persona_vector(set, f);
    EXPECT_GE(cosine_similarity(v.direction.layer(3), w.backend->planted_direction(d.id, 3)), 0.999) << d.id;
  }
}

// ---------------------------------------------------------------- layer selection

namespace {

LeveledScores leveled_from(const std::vector<std::vector<double>>& by_layer) {
  LeveledScores s;
  for (int level = 1; level <= 5; ++level) {
    for (int k = 0; k < 5; ++k) s.prompts.push_back({level, k, ""});
  }
  s.raw_by_layer = by_layer;
  return s;
}

PersonaVector dummy_vector(std::size_t L) {
  PersonaVector v;
  v.trait = "t";
  v.direction = LayerVectors(L, 1, std::vector<double>(L, 1.0), Reduction::mean_tokens);
  return v;
}

}  // namespace

TEST(SelectLayer, ExactLinearLayerWins) {
  std::vector<std::vector<double>> rows(4, std::vector<double>(25));
  std::mt19937_64 rng(33);
  std::normal_distribution<double> g(0, 1);
  for (std::size_t l = 0; l < 4; ++l) {
    for (std::size_t i = 0; i < 25; ++i) rows[l][i] = l == 2 ? 0.3 * static_cast<double>(i / 5 + 1) - 1 : (l == 0 ? 1.0 : g(rng));
  }
  const auto sel = select_layer({{"a", dummy_vector(4)}}, {{"a", leveled_from(rows)}});
  EXPECT_EQ(sel.selected_layer, 2u);
  EXPECT_DOUBLE_EQ(sel.mean_r_squared[2], 1.0);
  EXPECT_EQ(sel.mean_r_squared[0], 0.0);
}

TEST(SelectLayer, TiesGoToDeeperLayer) {
  std::vector<std::vector<double>> rows(5, std::vector<double>(25));
  for (std::size_t l = 0; l < 5; ++l) {
    for (std::size_t i = 0; i < 25; ++i) rows[l][i] = (l == 1 || l == 3) ? static_cast<double>(i / 5) : 7.0;
  }
  const auto sel = select_layer({{"a", dummy_vector(5)}}, {{"a", leveled_from(rows)}});
  EXPECT_EQ(sel.selected_layer, 3u);
  EXPECT_EQ(sel.tie_break, "deeper");
}

TEST(SelectLayer, InvariantUnderPerTraitPositiveRescaling) {
  std::mt19937_64 rng(34);
  std::normal_distribution<double> g(0, 1);
  std::map<std::string, PersonaVector> vecs;
  std::map<std::string, LeveledScores> a, b;
  for (const std::string t : {"x", "y", "z"}) {
    std::vector<std::vector<double>> rows(6, std::vector<double>(25));
    for (std::size_t l = 0; l < 6; ++l) {
      for (std::size_t i = 0; i < 25; ++i) rows[l][i] = static_cast<double>(l) * 0.2 * static_cast<double>(i / 5) + g(rng);
    }
    vecs[t] = dummy_vector(6);
    a[t] = leveled_from(rows);
    const double c = 0.01 + std::fabs(g(rng)) * 50;
    for (auto& row : rows) {
      for (auto& x : row) x = c * x + 3.0;
    }
    b[t] = leveled_from(rows);
  }
  const auto sa = select_layer(vecs, a), sb = select_layer(vecs, b);
  EXPECT_EQ(sa.selected_layer, sb.selected_layer);
  for (std::size_t l = 0; l < 6; ++l) EXPECT_NEAR(sa.mean_r_squared[l], sb.mean_r_squared[l], 1e-12);
}

TEST(SelectLayer, MissingCoverageIsAnError) {
  std::vector<std::vector<double>> rows(3, std::vector<double>(25, 1.0));
  EXPECT_EQ(code_of([&] { select_layer({{"a", dummy_vector(3)}, {"b", dummy_vector(3)}}, {{"a", leveled_from(rows)}}); }),
            ErrorCode::missing_coverage);
  auto short_rows = rows;
  short_rows.pop_back();
  EXPECT_EQ(code_of([&] { select_layer({{"a", dummy_vector(3)}}, {{"a", leveled_from(short_rows)}}); }),
            ErrorCode::missing_coverage);
  EXPECT_EQ(code_of([&] { select_layer({}, {}); }), ErrorCode::missing_coverage);
}

TEST(SelectLayer, SyntheticWorldSelectsPeakLayer) {
  const auto& built = noise_free_library();
  EXPECT_EQ(built.selection.selected_layer, 3u);
  for (std::size_t t = 0; t < built.selection.traits.size(); ++t) {
    EXPECT_GE(built.selection.fits[t][3].r_squared, 0.99) << built.selection.traits[t];
  }
}

// ---------------------------------------------------------------- calibration

namespace {

CalibrationSample sample(Polarity p, double raw) {
  CalibrationSample s;
  s.polarity = p;
  s.raw = raw;
  s.prompt_id = std::to_string(raw);
  return s;
}

}  // namespace

TEST(Calibrate, BoundsAreMaxAndMin) {
  const auto b = bounds_from_samples("t", 3, ProjectionMode::double_norm,
                                     {sample(Polarity::positive, 2), sample(Polarity::positive, 5),
                                      sample(Polarity::positive, 3), sample(Polarity::negative, -1),
                                      sample(Polarity::negative, -4)});
  EXPECT_EQ(b.max_pos, 5.0);
  EXPECT_EQ(b.min_neg, -4.0);
  EXPECT_EQ(b.source_prompt_ids.size(), 5u);
}

TEST(Calibrate, PolarityInconsistencyFails) {
  EXPECT_EQ(code_of([] {
              bounds_from_samples("t", 0, ProjectionMode::single,
                                  {sample(Polarity::positive, -1), sample(Polarity::negative, -2)});
            }),
            ErrorCode::calibration_failure);
  EXPECT_EQ(code_of([] { bounds_from_samples("t", 0, ProjectionMode::single, {sample(Polarity::positive, 1)}); }),
            ErrorCode::calibration_failure);
}

// At the peak layer without noise b = c * d, the extremal prompt's final token
// carries +/-5 * d, so single-mode bounds are exactly +/-5 and double-mode
// bounds are +/-5 / c with c = b . d.
TEST(Calibrate, MatchesGeneratorClosedForm) {
  World w;
  const auto& built = noise_free_library();
  for (const auto& [trait, entry] : built.library.traits) {
    const auto d = w.backend->planted_direction(trait, 3);
    const double c = unit_projection(entry.vector.direction.layer(3), d);
    EXPECT_NEAR(entry.bounds.max_pos, 5.0 / c, 1e-9 * 5.0 / c) << trait;
    EXPECT_NEAR(entry.bounds.min_neg, -5.0 / c, 1e-9 * 5.0 / c) << trait;
    const auto single = calibrate(trait, entry.vector, 3, *w.backend, *w.gateway, ProjectionMode::single, 1);
    EXPECT_NEAR(single.bounds.max_pos, 5.0, 1e-9);
    EXPECT_NEAR(single.bounds.min_neg, -5.0, 1e-9);
  }
  EXPECT_EQ(built.calibration.begin()->second.samples.size(), 50u);
}

TEST(Calibrate, HeldOutExtremalPromptsCanExceedBoundsUnderNoise) {
  World w(0.1);
  std::size_t clamped = 0, total = 0;
  for (const std::string trait : {"empathy", "toxicity", "formality", "funniness"}) {
    auto set = collect_responses(trait, *w.backend, *w.gateway, {5, 10, 1});
    const auto vec = extract_persona_vector(set, filter_responses(set, *w.gateway));
    const auto cal = calibrate(trait, vec, 3, *w.backend, *w.gateway, ProjectionMode::double_norm);
    for (auto pol : {Polarity::positive, Polarity::negative}) {
      for (int len = 1; len <= 5; ++len) {
        for (int s = 5; s < 15; ++s) {
          const auto text = w.gateway->generate_extremal_prompt(trait, pol, len, s);
          const auto raw = raw_score(w.backend->prompt_activations(text), vec, 3, ProjectionMode::double_norm);
          clamped += rescale(raw, cal.bounds).clamped;
          ++total;
        }
      }
    }
  }
  EXPECT_GT(clamped, 0u);
  EXPECT_LT(clamped, total);
}

// ---------------------------------------------------------------- scoring on a built library

TEST(ScoreAll, SaturatedPromptScoresFullLabel) {
  World w;
  const auto& lib = noise_free_library().library;
  const auto text = w.gateway->generate_extremal_prompt("empathy", Polarity::positive, 3, 17);
  const auto report = score_all(text, lib, *w.backend, "t");
  EXPECT_NEAR(report.label("empathetic").score, 1.0, 0.05);
  EXPECT_EQ(report.label("unempathetic").score, 0.0);
  validate_report(report, lib.registry);
}

TEST(ScoreAll, NeutralPromptScoresZeroEverywhere) {
  World w;
  const auto& lib = noise_free_library().library;
  const std::string text =
      "You are an assistant on a messaging app. Users come to you to talk about their day. Keep each reply to a "
      "short paragraph.";
  const auto report = score_all(text, lib, *w.backend, "t");
  ASSERT_EQ(report.labels.size(), 16u);
  for (const auto& l : report.labels) EXPECT_NEAR(l.score, 0.0, 1e-12) << l.id;
  for (const auto& l : report.labels) EXPECT_EQ(fixed6(l.score), "0.000000");
}

TEST(ScoreAll, DeterministicAndLibraryMismatchRejected) {
  World w;
  const auto& lib = noise_free_library().library;
  const std::string text = "Answer every message with warmth and a few puns, keeping a professional tone throughout.";
  EXPECT_EQ(to_json(score_all(text, lib, *w.backend, "t")).dump(), to_json(score_all(text, lib, *w.backend, "t")).dump());
  World other(0.0, 12345);
  EXPECT_EQ(code_of([&] { score_all(text, lib, *other.backend, "t"); }), ErrorCode::library_mismatch);
}

TEST(ScoreAll, MonotoneInLexiconLevelAndOrthogonalTraitsUnchanged) {
  World w;
  const auto& lib = noise_free_library().library;
  const std::vector<std::string> words = {"warmth", "caring", "understanding", "kindness", "compassion", "tenderness"};
  std::optional<PersonaReport> prev;
  for (std::size_t k = 0; k <= words.size(); ++k) {
    std::string text = "You are an assistant on a messaging app. Respond to each person";
    for (std::size_t i = 0; i < k; ++i) text += (i ? " and " : " with ") + words[i];
    text += ". Address the user directly.";
    const auto r = score_all(text, lib, *w.backend, "t");
    if (prev) {
      const double a = prev->dimensions[0].rescaled, b = r.dimensions[0].rescaled;
      if (!prev->dimensions[0].clamped) {
        EXPECT_GT(b, a) << k;
      }
      for (std::size_t d = 1; d < r.dimensions.size(); ++d) {
        EXPECT_NEAR(r.dimensions[d].rescaled, prev->dimensions[d].rescaled, 1e-9) << r.dimensions[d].trait;
      }
    }
    prev = r;
  }
  EXPECT_TRUE(prev->dimensions[0].clamped);
}

TEST(ScoreAll, ModeInvariantEndToEnd) {
  World w(0.1);
  const auto dbl = test::build_library(w, ProjectionMode::double_norm, 2, 10);
  const auto sgl = test::build_library(w, ProjectionMode::single, 2, 10);
  ASSERT_EQ(dbl.library.selected_layer, sgl.library.selected_layer);
  for (int i = 0; i < 10; ++i) {
    const auto text = w.gateway->generate_leveled_prompt(i % 2 ? "toxicity" : "sycophancy", 1 + i % 5, 20 + i);
    const auto a = score_all(text, dbl.library, *w.backend, "t"), b = score_all(text, sgl.library, *w.backend, "t");
    for (std::size_t k = 0; k < a.labels.size(); ++k) EXPECT_NEAR(a.labels[k].score, b.labels[k].score, 1e-9);
  }
}

// ---------------------------------------------------------------- checkpoints

TEST(Checkpoint, ResponseSetRoundTrip) {
  World w;
  auto set = collect_responses("empathy", *w.backend, *w.gateway, {2, 3, 1});
  judge_responses(set, *w.gateway);
  set.records[1].error = "transport_failure: injected";
  set.records[1].record.activations = {};
  const auto j = checkpoint::to_json(set);
  const auto back = checkpoint::response_set_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(checkpoint::to_json(back).dump(), j.dump());
  EXPECT_EQ(back.records[0].record.activations, set.records[0].record.activations);
  EXPECT_TRUE(back.records[1].failed());
}

TEST(Checkpoint, VectorLeveledSelectionCalibrationRoundTrip) {
  World w;
  auto set = collect_responses("funniness", *w.backend, *w.gateway, {1, 4, 1});
  const auto f = filter_responses(set, *w.gateway);
  const auto vec = extract_persona_vector(set, f);
  const auto vj = checkpoint::to_json(vec, f, set);
  const auto vec2 = checkpoint::persona_vector_from_json(nlohmann::json::parse(vj.dump()));
  EXPECT_EQ(vec2.direction, vec.direction);
  EXPECT_EQ(checkpoint::to_json(vec2, f, set).dump(), vj.dump());

  const auto lev = score_leveled_prompts("funniness", vec, *w.backend, *w.gateway, ProjectionMode::double_norm, 2);
  const auto lj = checkpoint::to_json(lev);
  EXPECT_EQ(checkpoint::to_json(checkpoint::leveled_from_json(nlohmann::json::parse(lj.dump()))).dump(), lj.dump());

  const auto sel = select_layer({{"funniness", vec}}, {{"funniness", lev}});
  const auto sj = checkpoint::to_json(sel);
  EXPECT_EQ(checkpoint::to_json(checkpoint::selection_from_json(nlohmann::json::parse(sj.dump()))).dump(), sj.dump());

  const auto cal = calibrate("funniness", vec, 3, *w.backend, *w.gateway, ProjectionMode::double_norm, 1);
  const auto cj = checkpoint::to_json(cal);
  const auto cal2 = checkpoint::calibration_from_json(nlohmann::json::parse(cj.dump()));
  EXPECT_EQ(cal2.bounds.max_pos, cal.bounds.max_pos);
  EXPECT_EQ(cal2.bounds.min_neg, cal.bounds.min_neg);
  EXPECT_EQ(checkpoint::to_json(cal2).dump(), cj.dump());
}

TEST(Checkpoint, MissingAndMalformed) {
  const auto dir = test::temp_dir("ckpt");
  try {
    checkpoint::read(checkpoint::dataset_path(dir, "empathy"), "dataset");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::not_found);
    EXPECT_NE(std::string(e.what()).find("run 'dataset' first"), std::string::npos);
  }
  EXPECT_EQ(code_of([] { checkpoint::leveled_from_json(nlohmann::json{{"trait", "x"}}); }),
            ErrorCode::malformed_document);
}
