#include <doctest.h>

#include <set>

#include "bevprompt/errors.hpp"
#include "bevprompt/grouping.hpp"
#include "bevprompt/io.hpp"
#include "support.hpp"

using namespace bevprompt;
using grouping::builtin_grouping;

namespace {

Object3D obj(int frame, double x, double y, const std::string& label, double score = 1.0) {
  Object3D o;
  o.frame = frame;
  o.box = {x, y, 0.8, 1.8, 1.5, 4.2, 0.0, label, score};
  return o;
}

}  // namespace

TEST_SUITE("grouping") {
  TEST_CASE("builtin tables match the fixture") {
    const auto tables = read_json(testing::source_dir() / "tests" / "fixtures" / "grouping_tables.json");
    for (const std::string name : {"functionality", "appearance", "entirety"}) {
      CAPTURE(name);
      const auto g = builtin_grouping(name);
      const auto& t = tables.at(name);
      CHECK(g.head_count() == t.at("heads").get<std::size_t>());
      CHECK(t.at("routes").size() == 9);
      for (const auto& [label, route] : t.at("routes").items()) {
        CAPTURE(label);
        const auto r = g.route(label);
        CHECK(r.superclass == route[0].get<std::string>());
        CHECK(r.head == route[1].get<std::size_t>());
      }
    }
  }

  TEST_CASE("worked routes") {
    const auto f = builtin_grouping("functionality");
    CHECK(f.superclass_of("car") == "vehicle");
    CHECK(f.superclass_of("bus") == "vehicle");
    CHECK(f.superclass_of("motorcyclist") == "cyclist");
    CHECK(f.superclass_of("pedestrian") == "pedestrian");
    CHECK(f.route("van").head == 0);
    const auto a = builtin_grouping("appearance");
    CHECK(a.route("truck").head == a.route("bus").head);
    CHECK(a.route("car").head == a.route("van").head);
    CHECK(a.route("barrowlist").superclass == "cyclist");
    CHECK(a.route("pedestrian").head == 3);
    CHECK(builtin_grouping("entirety").route("tricyclist").superclass == "object");
  }

  TEST_CASE("partition of the vocabulary") {
    for (const std::string name : {"functionality", "appearance", "entirety"}) {
      const auto g = builtin_grouping(name);
      std::multiset<std::string> seen;
      for (const auto& s : g.superclasses()) seen.insert(s.members.begin(), s.members.end());
      const auto& vocab = grouping::dair_vocabulary();
      CHECK(seen == std::multiset<std::string>(vocab.begin(), vocab.end()));
    }
  }

  TEST_CASE("functionality superclasses are the evaluation classes") {
    const auto g = builtin_grouping("functionality");
    std::set<std::string> names;
    for (const auto& s : g.superclasses()) names.insert(s.name);
    CHECK(names == std::set<std::string>{"vehicle", "cyclist", "pedestrian"});
  }

  TEST_CASE("arity") {
    const auto a = builtin_grouping("appearance");
    CHECK(a.classifier_arity(0) == 2);
    CHECK(a.classifier_arity(2) == 4);
    CHECK(a.classifier_arity(3) == 1);
    CHECK(builtin_grouping("functionality").classifier_arity(0) == 1);
  }

  TEST_CASE("errors") {
    CHECK_THROWS_AS(builtin_grouping("colour"), ConfigError);
    CHECK_THROWS_AS(builtin_grouping("functionality").route("tram"), LabelError);
    CHECK_THROWS_AS(grouping::ClassGrouping("x", {"a", "b"}, {{"s", {"a"}}}), ConfigError);
    CHECK_THROWS_AS(grouping::ClassGrouping("x", {"a", "b"}, {{"s", {"a", "b"}}, {"t", {"b"}}}), ConfigError);
    CHECK_THROWS_AS(grouping::ClassGrouping("x", {"a"}, {{"s", {"a", "c"}}}), ConfigError);
  }

  TEST_CASE("json round trip and custom definition") {
    const auto a = builtin_grouping("appearance");
    const auto back = grouping::ClassGrouping::from_json(a.to_json());
    CHECK(back.to_json() == a.to_json());
    const auto custom = grouping::ClassGrouping::from_json(
        {{"name", "two"},
         {"superclasses", {{{"name", "big"}, {"members", {"truck", "bus"}}, {"arity", 2}},
                           {{"name", "small"}, {"members", {"car"}}, {"arity", "superclass"}}}}});
    CHECK(custom.vocabulary().size() == 3);
    CHECK(custom.route("car").head == 1);
    CHECK(custom.classifier_arity(0) == 2);
  }

  TEST_CASE("route is pure") {
    const auto g = builtin_grouping("appearance");
    for (int k = 0; k < 5; ++k) CHECK(g.route("van").head == 1);
  }

  TEST_CASE("consistency: perfect and shuffled") {
    const auto g = builtin_grouping("functionality");
    std::vector<Object3D> gt{obj(0, 10, 0, "car"), obj(0, 20, 0, "bicyclist"), obj(1, 10, 5, "pedestrian")};
    const auto perfect = grouping::evaluate_grouping_consistency(g, gt, gt);
    for (const auto& [name, v] : perfect) CHECK(v == 1.0);

    auto shuffled = gt;
    shuffled[0].box.label = "pedestrian";
    shuffled[1].box.label = "truck";
    shuffled[2].box.label = "motorcyclist";
    for (const auto& [name, v] : grouping::evaluate_grouping_consistency(g, shuffled, gt)) CHECK(v == 0.0);

    const auto none = grouping::evaluate_grouping_consistency(g, {}, gt);
    for (const auto& [name, v] : none) CHECK_FALSE(v.has_value());
  }

  TEST_CASE("consistency matches a counting oracle") {
    const auto g = builtin_grouping("functionality");
    const auto& vocab = grouping::dair_vocabulary();
    Rng rng(5);
    std::vector<Object3D> gt, det;
    std::map<std::string, std::pair<int, int>> count;
    for (int i = 0; i < 200; ++i) {
      const auto truth = vocab[static_cast<std::size_t>(rng.uniform_int(0, 8))];
      const auto guess = rng.bernoulli(0.7) ? truth : vocab[static_cast<std::size_t>(rng.uniform_int(0, 8))];
      gt.push_back(obj(i / 10, 10.0 * (i % 10), 0, truth));
      det.push_back(obj(i / 10, 10.0 * (i % 10) + 0.1, 0.05, guess, rng.uniform()));
      auto& c = count[g.superclass_of(truth)];
      ++c.second;
      if (g.superclass_of(truth) == g.superclass_of(guess)) ++c.first;
    }
    const auto r = grouping::evaluate_grouping_consistency(g, det, gt);
    for (const auto& [name, c] : count) CHECK(r.at(name).value() == doctest::Approx(double(c.first) / c.second));
  }
}
