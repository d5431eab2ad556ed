#include <doctest.h>

#include "ldam/data.hpp"
#include "ldam/metrics.hpp"
#include "support/tempdir.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

using namespace ldam;
using ldam::testing::TempDir;
using ldam::testing::slurp;
using ldam::testing::write_file;

namespace {

TaskSchema small_schema() {
  TaskSchema s;
  s.indicator_names = {"hr", "sbp"};
  s.label_names = {"sepsis", "aki", "chf"};
  s.time_steps = 3;
  return s;
}

const std::string kGood = R"({"id":"p1","note":["fever","cough"],"ts":[[1,2,3],[4,5,6]],"y":[1,0,1]})";

std::vector<EhrSample> parse(const std::string& text, const TaskSchema& schema = small_schema()) {
  std::istringstream in(text);
  return parse_dataset(in, schema, "mem");
}

SynthSpec small_spec(const TaskSchema& schema) {
  SynthSpec spec = SynthSpec::defaults(schema, 2, 2.0);
  spec.n_samples = 50;
  spec.filler_vocab = 20;
  spec.note_length = 6;
  return spec;
}

}  // namespace

TEST_SUITE("data.schema") {
  TEST_CASE("desk default has the benchmark sizes") {
    const TaskSchema s = TaskSchema::desk_default();
    CHECK(s.num_indicators() == 17);
    CHECK(s.num_labels() == 25);
    CHECK(s.time_steps == 48);
    CHECK(s.label_names[4] == "Fluid and electrolyte disorders");
    CHECK(s.label_names[8] == "Pleurisy; pneumothorax; pulmonary collapse");
    CHECK(s.indicator_names[5] == "Glascow coma scale total");
    CHECK(s.indicator_names[13] == "Systolic blood pressure");
    CHECK_NOTHROW(s.validate());
  }

  TEST_CASE("json round trip") {
    TaskSchema s = small_schema();
    s.reference_values = {70.0, 120.0};
    s.missing_value = -999.0;
    TempDir dir;
    save_schema(s, dir / "schema.json");
    const TaskSchema back = load_schema(dir / "schema.json");
    CHECK(back.indicator_names == s.indicator_names);
    CHECK(back.label_names == s.label_names);
    CHECK(back.time_steps == 3);
    CHECK(back.reference_values == s.reference_values);
    CHECK(back.missing_value == s.missing_value);
  }

  TEST_CASE("invalid schemas") {
    for (const std::string text :
         {R"({"indicator_names":[],"label_names":["a"],"T":3})", R"({"indicator_names":["a","a"],"label_names":["b"],"T":3})",
          R"({"indicator_names":["a"],"label_names":["b"],"T":0})", R"({"indicator_names":["a"],"label_names":["b"]})",
          R"({"indicator_names":["a"],"label_names":["b"],"T":3,"colour":1})",
          R"({"indicator_names":["a"],"label_names":["b"],"T":3,"reference_values":[1,2]})", "[1,2]", "{"}) {
      CAPTURE(text);
      CHECK_THROWS_AS(schema_from_json(text), DataError);
    }
  }
}

TEST_SUITE("data.load") {
  TEST_CASE("empty input gives an empty list") {
    CHECK(parse("").empty());
    CHECK(parse("\n  \n").empty());
    TempDir dir;
    write_file(dir / "empty.jsonl", "");
    CHECK(load_dataset(dir / "empty.jsonl", small_schema()).empty());
  }

  TEST_CASE("a good record") {
    const auto v = parse(kGood);
    REQUIRE(v.size() == 1);
    CHECK(v[0].id == "p1");
    CHECK(v[0].note_tokens == std::vector<std::string>{"fever", "cough"});
    CHECK(v[0].timeseries(1, 2) == 6.0);
    CHECK(v[0].labels(2) == 1.0);
  }

  TEST_CASE("one indicator row short names the line") {
    const std::string bad = R"({"id":"p2","note":["a"],"ts":[[1,2,3]],"y":[0,0,0]})";
    try {
      parse(kGood + "\n" + bad + "\n");
      FAIL("expected a shape error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("mem:2") != std::string::npos);
      CHECK(std::string(e.what()).find("ts") != std::string::npos);
    }
  }

  TEST_CASE("every invariant-breaking mutation is rejected") {
    const std::vector<std::string> mutations{
        R"({"id":"p","note":["a"],"ts":[[1,2,3],[4,5,6],[7,8,9]],"y":[1,0,1]})",  // extra row
        R"({"id":"p","note":["a"],"ts":[[1,2,3],[4,5]],"y":[1,0,1]})",            // short row
        R"({"id":"p","note":["a"],"ts":[[1,2,3],[4,5,6,7]],"y":[1,0,1]})",        // long row
        R"({"id":"p","note":["a"],"ts":[[1,2,"x"],[4,5,6]],"y":[1,0,1]})",        // non-numeric value
        R"({"id":"p","note":["a"],"ts":[1,2],"y":[1,0,1]})",                      // rows are not arrays
        R"({"id":"p","note":["a"],"ts":[[1,2,3],[4,5,6]],"y":[1,0]})",            // too few labels
        R"({"id":"p","note":["a"],"ts":[[1,2,3],[4,5,6]],"y":[1,0,1,0]})",        // too many labels
        R"({"id":"p","note":["a"],"ts":[[1,2,3],[4,5,6]],"y":[1,0,2]})",          // non-binary label
        R"({"id":"p","note":["a"],"ts":[[1,2,3],[4,5,6]],"y":[1,0,0.5]})",        // fractional label
        R"({"id":"p","note":["a"],"ts":[[1,2,3],[4,5,6]],"y":[1,0,true]})",       // boolean label
        R"({"id":"p","note":["a"],"ts":[[1,2,3],[4,5,6]],"y":[1,0,"1"]})",        // string label
        R"({"id":"p","note":["a"],"ts":[[1,2,3],[4,5,6]],"y":1})",                // labels not an array
        R"({"id":"p","note":[],"ts":[[1,2,3],[4,5,6]],"y":[1,0,1]})",             // empty note
        R"({"id":"p","note":[1,2],"ts":[[1,2,3],[4,5,6]],"y":[1,0,1]})",          // non-string tokens
        R"({"id":7,"note":["a"],"ts":[[1,2,3],[4,5,6]],"y":[1,0,1]})",            // non-string id
        R"({"note":["a"],"ts":[[1,2,3],[4,5,6]],"y":[1,0,1]})",                   // missing id
        R"({"id":"p","ts":[[1,2,3],[4,5,6]],"y":[1,0,1]})",                       // missing note
        R"({"id":"p","note":["a"],"y":[1,0,1]})",                                 // missing ts
        R"({"id":"p","note":["a"],"ts":[[1,2,3],[4,5,6]]})",                      // missing y
        R"({"id":"p","note":["a"],"ts":[[1,2,3],[4,5,6]],"y":[1,0,1],"age":3})",  // unknown field
        R"(["p",["a"]])",                                                         // not an object
        R"({"id":"p","note":["a"],"ts":[[1,2,3],[4,5,6]],"y":[1,0,1])",           // truncated
    };
    for (const auto& m : mutations) {
      CAPTURE(m);
      CHECK_THROWS_AS(parse(kGood + "\n" + m + "\n"), DataError);
    }
    // Randomized: flip one character of a good record; anything that still parses must be valid.
    std::mt19937_64 rng(5);
    const std::string alphabet = "0123456789[]{},:\"-.ex ";
    for (int rep = 0; rep < 500; ++rep) {
      std::string m = kGood;
      m[rng() % m.size()] = alphabet[rng() % alphabet.size()];
      try {
        for (const auto& s : parse(m)) CHECK_NOTHROW(validate_sample(s, small_schema(), "fuzz"));
      } catch (const DataError&) {
      }
    }
  }

  TEST_CASE("missing readings are imputed from reference values") {
    TaskSchema s = small_schema();
    s.reference_values = {70.0, 120.0};
    s.missing_value = -1.0;
    const auto v = parse(R"({"id":"p","note":["a"],"ts":[[null,2,-1],[4,null,6]],"y":[0,0,0]})", s);
    CHECK(v[0].timeseries(0, 0) == 70.0);
    CHECK(v[0].timeseries(0, 2) == 70.0);
    CHECK(v[0].timeseries(1, 1) == 120.0);
    CHECK(v[0].timeseries(0, 1) == 2.0);
    const auto zero = parse(R"({"id":"p","note":["a"],"ts":[[null,2,-1],[4,5,6]],"y":[0,0,0]})");
    CHECK(zero[0].timeseries(0, 0) == 0.0);
    CHECK(zero[0].timeseries(0, 2) == -1.0);
  }

  TEST_CASE("write then load preserves every field") {
    const TaskSchema schema = TaskSchema::desk_default();
    SynthSpec spec = SynthSpec::defaults(schema);
    spec.n_samples = 30;
    const auto samples = generate_synthetic(spec, schema);
    TempDir dir;
    save_dataset(samples, dir / "d.jsonl");
    const auto back = load_dataset(dir / "d.jsonl", schema);
    REQUIRE(back.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      CHECK(back[i].id == samples[i].id);
      CHECK(back[i].note_tokens == samples[i].note_tokens);
      CHECK(back[i].timeseries == samples[i].timeseries);
      CHECK(back[i].labels == samples[i].labels);
    }
  }
}

TEST_SUITE("data.synthetic") {
  TEST_CASE("identical specs serialize identically") {
    const TaskSchema schema = TaskSchema::desk_default();
    SynthSpec spec = SynthSpec::defaults(schema);
    spec.n_samples = 100;
    TempDir dir;
    save_dataset(generate_synthetic(spec, schema), dir / "a.jsonl");
    save_dataset(generate_synthetic(spec, schema), dir / "b.jsonl");
    CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));
    spec.seed = 8;
    save_dataset(generate_synthetic(spec, schema), dir / "c.jsonl");
    CHECK(slurp(dir / "a.jsonl") != slurp(dir / "c.jsonl"));
  }

  TEST_CASE("zero base rate plants nothing") {
    const TaskSchema schema = small_schema();
    SynthSpec spec = small_spec(schema);
    spec.base_label_rate = 0.0;
    spec.token_noise_rate = 0.0;
    std::set<std::string> triggers;
    for (const auto& set : spec.trigger_tokens) triggers.insert(set.begin(), set.end());
    for (const auto& s : generate_synthetic(spec, schema)) {
      CHECK(s.labels.isZero(0.0));
      for (const auto& t : s.note_tokens) CHECK(triggers.count(t) == 0);
    }
  }

  TEST_CASE("full base rate with single triggers puts every trigger in every note") {
    const TaskSchema schema = small_schema();
    SynthSpec spec = SynthSpec::defaults(schema, 1, 2.0);
    spec.base_label_rate = 1.0;
    spec.n_samples = 20;
    for (const auto& s : generate_synthetic(spec, schema)) {
      for (const auto& set : spec.trigger_tokens)
        CHECK(std::count(s.note_tokens.begin(), s.note_tokens.end(), set[0]) >= 1);
    }
  }

  TEST_CASE("every positive label co-occurs with one of its triggers") {
    const TaskSchema schema = TaskSchema::desk_default();
    SynthSpec spec = SynthSpec::defaults(schema);
    spec.n_samples = 1000;
    for (const auto& s : generate_synthetic(spec, schema)) {
      for (Eigen::Index j = 0; j < s.labels.size(); ++j) {
        if (s.labels(j) != 1.0) continue;
        const auto& set = spec.trigger_tokens[static_cast<std::size_t>(j)];
        CHECK(std::any_of(set.begin(), set.end(), [&](const std::string& t) {
          return std::find(s.note_tokens.begin(), s.note_tokens.end(), t) != s.note_tokens.end();
        }));
      }
    }
  }

  TEST_CASE("prevalence stays within three binomial sigmas") {
    const TaskSchema schema = TaskSchema::desk_default();
    SynthSpec spec = SynthSpec::defaults(schema);
    spec.n_samples = 1000;
    const auto samples = generate_synthetic(spec, schema);
    const double p = spec.base_label_rate;
    const double sigma = std::sqrt(p * (1.0 - p) / 1000.0);
    for (Eigen::Index j = 0; j < 25; ++j) {
      double count = 0;
      for (const auto& s : samples) count += s.labels(j);
      CAPTURE(j);
      CHECK(std::abs(count / 1000.0 - p) <= 3.0 * sigma);
    }
  }

  TEST_CASE("channel shifts move the trigger channel mean") {
    const TaskSchema schema = TaskSchema::desk_default();
    SynthSpec spec = SynthSpec::defaults(schema);
    spec.n_samples = 1000;
    const auto samples = generate_synthetic(spec, schema);
    double pos = 0, neg = 0, npos = 0, nneg = 0;
    for (const auto& s : samples) {
      const double m = s.timeseries.row(20 % 17).mean();
      (s.labels(20) == 1.0 ? pos : neg) += m;
      (s.labels(20) == 1.0 ? npos : nneg) += 1;
    }
    CHECK(pos / npos - neg / nneg > 1.5);
  }

  TEST_CASE("bag-of-trigger-tokens logistic regression separates the task") {
    const TaskSchema schema = TaskSchema::desk_default();
    SynthSpec spec = SynthSpec::defaults(schema);
    spec.n_samples = 1000;
    const auto samples = generate_synthetic(spec, schema);
    std::map<std::string, Eigen::Index> vocab;
    for (const auto& set : spec.trigger_tokens)
      for (const auto& t : set) vocab.emplace(t, static_cast<Eigen::Index>(vocab.size()));
    const auto n = static_cast<Eigen::Index>(samples.size());
    const Eigen::Index v = static_cast<Eigen::Index>(vocab.size());
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, v + 1);
    Eigen::MatrixXd y(n, 25);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& s = samples[static_cast<std::size_t>(i)];
      for (const auto& t : s.note_tokens) {
        auto it = vocab.find(t);
        if (it != vocab.end()) x(i, it->second) += 1.0;
      }
      x(i, v) = 1.0;
      y.row(i) = s.labels.transpose();
    }
    // First 800 rows fit, last 200 score; full-batch gradient descent on the mean log-loss.
    const Eigen::MatrixXd xf = x.topRows(800), yf = y.topRows(800);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(v + 1, 25);
    for (int it = 0; it < 500; ++it) {
      const Eigen::MatrixXd p = (1.0 + (-(xf * w).array()).exp()).inverse().matrix();
      w -= 2.0 * xf.transpose() * (p - yf) / 800.0;
    }
    const Eigen::MatrixXd scores = x.bottomRows(200) * w;
    CHECK(roc_auc(scores, y.bottomRows(200), Averaging::micro) > 0.95);
  }

  TEST_CASE("spec validation") {
    const TaskSchema schema = small_schema();
    SynthSpec spec = small_spec(schema);
    CHECK_NOTHROW(spec.validate(schema));
    SynthSpec bad = spec;
    bad.base_label_rate = 1.5;
    CHECK_THROWS_AS(bad.validate(schema), DataError);
    bad = spec;
    bad.trigger_tokens.pop_back();
    CHECK_THROWS_AS(bad.validate(schema), DataError);
    bad = spec;
    bad.trigger_tokens[0] = {"filb"};
    CHECK_THROWS_AS(bad.validate(schema), DataError);
    bad = spec;
    bad.trigger_channels[1].first = 5;
    CHECK_THROWS_AS(bad.validate(schema), DataError);
    bad = spec;
    bad.trigger_name_noise = -1.0;
    CHECK_THROWS_AS(bad.validate(schema), DataError);
  }

  TEST_CASE("companion embeddings put triggers near their label names") {
    const TaskSchema schema = TaskSchema::desk_default();
    const SynthSpec spec = SynthSpec::defaults(schema);
    const EmbeddingTable table = synthetic_embeddings(spec, schema, 64);
    CHECK(table.size() == 17 + 25 + 300 + 50);
    double near = 0.0, far = 0.0;
    for (std::size_t j = 0; j < 25; ++j) {
      const auto name = table.lookup(schema.label_names[j]);
      CHECK(name == toy_embed(spec.seed, schema.label_names[j], 64));
      for (const auto& t : spec.trigger_tokens[j]) {
        const auto v = table.lookup(t);
        CHECK(std::abs(v.norm() - 1.0) < 1e-12);
        near += v.dot(name) / 50.0;
        far += v.dot(table.lookup(schema.label_names[(j + 1) % 25])) / 50.0;
      }
    }
    // Unit anchor plus unit noise at scale 1 gives an expected cosine near 1/sqrt(2).
    CHECK(near > 0.6);
    CHECK(std::abs(far) < 0.15);
    CHECK(synthetic_embeddings(spec, schema, 64).entries() == table.entries());
  }
}

TEST_SUITE("data.split") {
  TEST_CASE("sizes, determinism, union and disjointness") {
    const TaskSchema schema = small_schema();
    SynthSpec spec = small_spec(schema);
    spec.n_samples = 10;
    const auto samples = generate_synthetic(spec, schema);
    const auto [train, test] = split(samples, 0.8, 3);
    CHECK(train.size() == 8);
    CHECK(test.size() == 2);
    const auto again = split(samples, 0.8, 3);
    std::set<std::string> a, b, all;
    for (const auto& s : train) a.insert(s.id);
    for (const auto& s : test) b.insert(s.id);
    for (const auto& s : samples) all.insert(s.id);
    for (std::size_t i = 0; i < train.size(); ++i) CHECK(again.first[i].id == train[i].id);
    std::set<std::string> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(both, both.begin()));
    CHECK(both.empty());
    a.insert(b.begin(), b.end());
    CHECK(a == all);
    CHECK_THROWS_AS(split(samples, 1.0, 3), DataError);
  }
}

TEST_SUITE("data.text") {
  TEST_CASE("normalization") {
    const auto tokens = normalize_text("The patient's BP was 120/80, and HR-fast!  No fever.", default_stop_words());
    CHECK(tokens == std::vector<std::string>{"patients", "bp", "hrfast", "fever"});
    CHECK(normalize_text("  ", default_stop_words()).empty());
  }
}
