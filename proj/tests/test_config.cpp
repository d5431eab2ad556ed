#include <doctest.h>

#include "ldam/config.hpp"
#include "support/tempdir.hpp"

using namespace ldam;
using ldam::testing::TempDir;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text, "run.cfg");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("config.parse") {
  TEST_CASE("comments, blanks and whitespace") {
    const auto m = parse_config("# header\n\n  epochs = 12  # trailing\nlr=0.001\r\n\tmode =text_only\n");
    CHECK(m.size() == 3);
    CHECK(m.at("epochs") == "12");
    CHECK(m.at("lr") == "0.001");
    CHECK(m.at("mode") == "text_only");
  }

  TEST_CASE("errors carry the line number") {
    CHECK(error_of("epochs = 1\nlearning_rate = 2\n").find("run.cfg:2: unknown key 'learning_rate'") != std::string::npos);
    CHECK(error_of("epochs = 1\n\nepochs = 2\n").find("run.cfg:3:") != std::string::npos);
    CHECK(error_of("epochs = 1\n\nepochs = 2\n").find("twice") != std::string::npos);
    CHECK(error_of("epochs\n").find("run.cfg:1: expected key = value") != std::string::npos);
    CHECK(error_of("epochs =\n").find("empty value") != std::string::npos);
  }

  TEST_CASE("files") {
    TempDir dir;
    ldam::testing::write_file(dir / "a.cfg", "batch_size = 4\n");
    CHECK(load_config_file(dir / "a.cfg").at("batch_size") == "4");
    CHECK_THROWS_AS(load_config_file(dir / "missing.cfg"), ConfigError);
  }
}

TEST_SUITE("config.apply") {
  TEST_CASE("values land in the right fields") {
    ModelConfig m;
    TrainConfig t;
    apply_config(parse_config("embed_dim = 32\nhidden = 16\nngram = 5\nmode = timeseries_only\nattention = self\n"
                              "lambda_label = 0.25\nepochs = 7\nbatch_size = 3\nlr = 1e-2\nseed = 99\nshuffle = false\n"
                              "checkpoint_every = 2\nearly_stop_patience = 4\n"),
                 m, t);
    CHECK(m.embed_dim == 32);
    CHECK(m.hidden == 16);
    CHECK(m.ngram == 5);
    CHECK(m.mode == Modality::timeseries_only);
    CHECK(m.attention == AttentionKind::self);
    CHECK(m.lambda_label == 0.25);
    CHECK(t.epochs == 7);
    CHECK(t.batch_size == 3);
    CHECK(t.lr == 1e-2);
    CHECK(t.seed == 99);
    CHECK_FALSE(t.shuffle);
    CHECK(t.checkpoint_every == 2);
    CHECK(t.early_stop_patience == 4);
    apply_config(parse_config("early_stop_patience = off\n"), m, t);
    CHECK_FALSE(t.early_stop_patience.has_value());
  }

  TEST_CASE("bad values") {
    for (const char* text : {"epochs = ten\n", "epochs = 0\n", "lr = -1\n", "lr = 1e-2x\n", "shuffle = maybe\n",
                             "mode = audio\n", "attention = both\n", "hidden = 0\n", "batch_size = -3\n"}) {
      CAPTURE(text);
      ModelConfig m;
      TrainConfig t;
      CHECK_THROWS_AS(apply_config(parse_config(text), m, t), ConfigError);
    }
  }

  TEST_CASE("to_string round trip") {
    ModelConfig m;
    m.mode = Modality::text_only;
    m.lambda_label = 0.1;
    m.conv_channels = 3;
    TrainConfig t;
    t.lr = 3e-4;
    t.seed = 12345678901234ULL;
    t.early_stop_patience = 6;
    ModelConfig m2;
    TrainConfig t2;
    apply_config(parse_config(config_to_string(m, t)), m2, t2);
    CHECK(config_to_string(m2, t2) == config_to_string(m, t));
    CHECK(m2.lambda_label == m.lambda_label);
    CHECK(t2.lr == t.lr);
    CHECK(t2.seed == t.seed);
    CHECK(m2.conv_channels == 3);
    t.early_stop_patience.reset();
    apply_config(parse_config(config_to_string(m, t)), m2, t2);
    CHECK_FALSE(t2.early_stop_patience.has_value());
  }
}

TEST_SUITE("config.synth") {
  TEST_CASE("spec keys") {
    const TaskSchema schema = TaskSchema::desk_default();
    const auto entries = parse_key_values("n_samples = 12\ntriggers_per_label = 3\nshift = 0.5\nbase_label_rate = 0.2\n",
                                          "s.cfg", synth_spec_keys());
    const SynthSpec spec = synth_spec_from_config(entries, schema, 5);
    CHECK(spec.n_samples == 12);
    CHECK(spec.seed == 5);
    CHECK(spec.base_label_rate == 0.2);
    CHECK(spec.trigger_tokens.size() == 25);
    CHECK(spec.trigger_tokens[0].size() == 3);
    CHECK(spec.trigger_channels[0].second == 0.5);
    CHECK_THROWS_AS(synth_spec_from_config({{"triggers_per_label", "0"}}, schema, 1), ConfigError);
    CHECK_THROWS_AS(synth_spec_from_config({{"base_label_rate", "2"}}, schema, 1), ConfigError);
    CHECK_THROWS_AS(parse_key_values("epochs = 3\n", "s.cfg", synth_spec_keys()), ConfigError);
  }
}
