#include <filesystem>
#include <string>

#include "catch_amalgamated.hpp"

#include "subsample_nn/config.hpp"

using namespace snn;
using nlohmann::json;

namespace {

json synth_doc() {
    return json::parse(R"({
        "dataset": {"kind": "synth", "samples": 300, "train": 200, "test": 50, "validation": 50},
        "model": {"hidden_layers": 1, "width": 16},
        "epochs": 1
    })");
}

} // namespace

TEST_CASE("config: defaults") {
    const RunConfig c = config_from_json(json::object());
    CHECK(c.dataset.kind == "idx");
    CHECK(c.model.hidden_layers == 3);
    CHECK(c.model.width == 1000);
    CHECK(c.policy.kind == "exact");
    CHECK(c.policy.K == 6);
    CHECK(c.policy.L == 5);
    CHECK(c.policy.m == 3);
    CHECK(c.policy.C == 0.83);
    CHECK(c.epochs == 50);
    CHECK(c.seed == 0);
    CHECK(c.effective_batch_size() == 1);
    CHECK(c.effective_learning_rate() == 1e-3);
}

TEST_CASE("config: effective batch size and learning rate depend on the policy") {
    RunConfig c = config_from_json(json::parse(R"({"policy": {"kind": "mc"}})"));
    CHECK(c.effective_batch_size() == 20);
    CHECK(c.effective_learning_rate() == 1e-3);
    c.batch_size = 1;
    CHECK(c.effective_learning_rate() == 1e-4);
    c.optimizer.learning_rate = 0.05;
    CHECK(c.effective_learning_rate() == 0.05);
}

TEST_CASE("config: unknown keys and wrong types are rejected") {
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"epoch": 3})")), ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"policy": {"kind": "alsh", "k": 6}})")), ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"model": {"width": -4}})")), ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"model": {"width": "wide"}})")), ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"dataset": 3})")), ConfigError);
    CHECK_THROWS_AS(config_from_json(json::parse("[1, 2]")), ConfigError);
}

TEST_CASE("config: overrides") {
    json doc = synth_doc();
    apply_override(doc, "epochs=4");
    apply_override(doc, "policy.kind=alsh");
    apply_override(doc, "policy.C=0.5");
    apply_override(doc, "optimizer.learning_rate=1e-2");
    apply_override(doc, "out=runs/x=y");
    CHECK(doc["epochs"] == 4);
    CHECK(doc["policy"]["kind"] == "alsh");
    CHECK(doc["policy"]["C"] == 0.5);
    CHECK(doc["out"] == "runs/x=y");
    const RunConfig c = config_from_json(doc, "/base");
    CHECK(c.epochs == 4);
    CHECK(c.policy.kind == "alsh");
    CHECK(c.policy.C == 0.5);
    CHECK(c.effective_learning_rate() == 0.01);
    CHECK(c.out == "/base/runs/x=y");

    CHECK_THROWS_AS(apply_override(doc, "epochs"), ConfigError);
    CHECK_THROWS_AS(apply_override(doc, "=3"), ConfigError);
    CHECK_THROWS_AS(apply_override(doc, "policy..K=3"), ConfigError);
    CHECK_THROWS_AS(apply_override(doc, "policy.=3"), ConfigError);
}

TEST_CASE("config: relative paths resolve against the config directory") {
    const RunConfig c = config_from_json(
        json::parse(R"({"dataset": {"images": "d/img", "labels": "/abs/lbl"}, "out": "../runs/r"})"), "/cfg/dir");
    CHECK(c.dataset.images == "/cfg/dir/d/img");
    CHECK(c.dataset.labels == "/abs/lbl");
    CHECK(c.out == "/cfg/runs/r");
}

TEST_CASE("config: validate catches every bad parameter before compute") {
    CHECK_NOTHROW(validate(config_from_json(synth_doc())));
    auto bad = [](const std::string& assignment) {
        json doc = synth_doc();
        apply_override(doc, assignment);
        return config_from_json(doc);
    };
    for (const char* a : {"dataset.kind=csv", "dataset.samples=0", "dataset.separation=0", "dataset.train=1000",
                          "dataset.train=0", "model.width=0", "model.activation=tanh", "optimizer.kind=rmsprop",
                          "optimizer.learning_rate=0", "optimizer.learning_rate=-1", "batch_size=0",
                          "policy.kind=sparse"}) {
        INFO(a);
        CHECK_THROWS_AS(validate(bad(a)), ConfigError);
    }
    json doc = synth_doc();
    apply_override(doc, "policy.kind=dropout");
    for (const char* p : {"0", "1.5", "-0.1"}) {
        doc["policy"]["p_keep"] = json::parse(p);
        INFO(p);
        CHECK_THROWS(validate(config_from_json(doc)));
    }
    doc["policy"]["p_keep"] = 1.0;
    CHECK_NOTHROW(validate(config_from_json(doc)));

    doc = synth_doc();
    apply_override(doc, "policy.kind=alsh");
    for (const char* a : {"policy.K=0", "policy.L=0", "policy.C=0", "policy.C=1"}) {
        json d = doc;
        apply_override(d, a);
        INFO(a);
        CHECK_THROWS_AS(validate(config_from_json(d)), ConfigError);
    }
    json no_hidden = doc;
    apply_override(no_hidden, "model.hidden_layers=0");
    CHECK_THROWS_AS(validate(config_from_json(no_hidden)), ConfigError);

    doc = synth_doc();
    apply_override(doc, "policy.kind=mc");
    apply_override(doc, "policy.k_samples=17");
    CHECK_THROWS_AS(validate(config_from_json(doc)), ConfigError);
    apply_override(doc, "policy.k_samples=16");
    CHECK_NOTHROW(validate(config_from_json(doc)));
    apply_override(doc, "policy.k_samples=0");
    CHECK_THROWS_AS(validate(config_from_json(doc)), ConfigError);

    json missing = json::parse(R"({"dataset": {"images": "nope-img", "labels": "nope-lbl"}})");
    CHECK_THROWS_AS(validate(config_from_json(missing, "/nonexistent")), ConfigError);
    CHECK_THROWS_AS(validate(config_from_json(json::object())), ConfigError);
}

TEST_CASE("config: to_json round trip keeps effective values") {
    json doc = synth_doc();
    apply_override(doc, "policy.kind=mc");
    apply_override(doc, "policy.k_samples=4");
    const RunConfig c = config_from_json(doc);
    const json out = config_to_json(c);
    CHECK(out["batch_size"] == 20);
    CHECK(out["optimizer"]["learning_rate"] == 1e-3);
    CHECK_FALSE(out.contains("out"));
    const RunConfig back = config_from_json(out);
    CHECK(config_to_json(back) == out);
}

TEST_CASE("config: shipped example configs load and validate") {
    const std::filesystem::path dir = std::filesystem::path(SNN_SOURCE_DIR) / "configs";
    std::size_t n = 0;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() != ".json") {
            continue;
        }
        INFO(entry.path().string());
        const RunConfig c = config_from_json(load_config_json(entry.path().string()), dir);
        CHECK_NOTHROW(validate(c));
        ++n;
    }
    CHECK(n >= 5);
    CHECK_THROWS_AS(load_config_json((dir / "missing.json").string()), ConfigError);
}
