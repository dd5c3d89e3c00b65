#include "palmr/scene.hpp"

#include <algorithm>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "palmr/rng.hpp"

namespace palmr {

namespace {

constexpr std::array<std::string_view, kNumShapes> kShapeNames = {
    "circle", "square", "triangle"};
constexpr std::array<std::string_view, kNumColors> kColorNames = {
    "red", "blue", "green"};
constexpr std::array<std::string_view, kNumSizes> kSizeNames = {"small",
                                                                "large"};
constexpr std::array<std::string_view, kNumAttributeKinds> kKindNames = {
    "shape", "color", "size"};
constexpr std::array<std::string_view, 5> kPredicateNames = {
    "count_by_attribute", "has_object", "left_of", "above", "attribute_of"};
constexpr std::array<std::string_view, kNumTemplates> kTemplateNames = {
    "count", "attribute_lookup", "comparison", "relation"};

std::string_view bool_name(int v) { return v != 0 ? "true" : "false"; }

}  // namespace

int num_values(AttributeKind kind) {
  switch (kind) {
    case AttributeKind::kShape: return kNumShapes;
    case AttributeKind::kColor: return kNumColors;
    case AttributeKind::kSize: return kNumSizes;
  }
  return 0;
}

std::string_view kind_name(AttributeKind kind) {
  return kKindNames.at(static_cast<std::size_t>(kind));
}

std::string_view value_name(AttributeKind kind, int value) {
  switch (kind) {
    case AttributeKind::kShape: return kShapeNames.at(value);
    case AttributeKind::kColor: return kColorNames.at(value);
    case AttributeKind::kSize: return kSizeNames.at(value);
  }
  return {};
}

std::optional<AttributeKind> kind_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (kKindNames[i] == name) return static_cast<AttributeKind>(i);
  }
  return std::nullopt;
}

std::optional<int> value_from_name(AttributeKind kind, std::string_view name) {
  for (int v = 0; v < num_values(kind); ++v) {
    if (value_name(kind, v) == name) return v;
  }
  return std::nullopt;
}

int attribute_class(AttributeKind kind, int value) {
  switch (kind) {
    case AttributeKind::kShape: return value;
    case AttributeKind::kColor: return kNumShapes + value;
    case AttributeKind::kSize: return kNumShapes + kNumColors + value;
  }
  return -1;
}

AttributeKind class_kind(int cls) {
  if (cls < kNumShapes) return AttributeKind::kShape;
  if (cls < kNumShapes + kNumColors) return AttributeKind::kColor;
  return AttributeKind::kSize;
}

int class_value(int cls) {
  if (cls < kNumShapes) return cls;
  if (cls < kNumShapes + kNumColors) return cls - kNumShapes;
  return cls - kNumShapes - kNumColors;
}

int Object::value_of(AttributeKind kind) const {
  switch (kind) {
    case AttributeKind::kShape: return static_cast<int>(shape);
    case AttributeKind::kColor: return static_cast<int>(color);
    case AttributeKind::kSize: return static_cast<int>(size);
  }
  return -1;
}

void SceneConfig::validate() const {
  if (grid_size < 1) throw std::invalid_argument("scene: grid_size must be >= 1");
  if (max_objects < 1) {
    throw std::invalid_argument("scene: max_objects must be >= 1");
  }
  if (max_objects > kMaxObjectsLimit) {
    throw std::invalid_argument(
        fmt::format("scene: max_objects must be <= {}", kMaxObjectsLimit));
  }
  if (min_objects < 1 || min_objects > max_objects) {
    throw std::invalid_argument("scene: need 1 <= min_objects <= max_objects");
  }
  if (grid_size * grid_size < max_objects) {
    throw std::invalid_argument(
        "scene: max_objects exceeds grid capacity (grid_size^2)");
  }
}

Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  Scene scene;
  scene.scene_id = fmt::format("scene-{:016x}", derive_seed(seed, {0}));
  scene.grid_size = cfg.grid_size;

  const int n = rng.between(cfg.min_objects, cfg.max_objects);
  const int cells = cfg.grid_size * cfg.grid_size;
  std::vector<int> order(static_cast<std::size_t>(cells));
  std::iota(order.begin(), order.end(), 0);
  // Partial Fisher-Yates: the first n entries are distinct cells.
  for (int i = 0; i < n; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(cells - i)));
    std::swap(order[i], order[j]);
  }
  scene.objects.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Object obj;
    obj.id = i;
    obj.shape = static_cast<Shape>(rng.below(kNumShapes));
    obj.color = static_cast<Color>(rng.below(kNumColors));
    obj.size = static_cast<Size>(rng.below(kNumSizes));
    obj.position = {order[i] / cfg.grid_size, order[i] % cfg.grid_size};
    scene.objects.push_back(obj);
  }
  return scene;
}

void validate_scene(const Scene& scene, int max_objects) {
  if (scene.grid_size < 1) throw std::invalid_argument("scene: bad grid_size");
  const int n = static_cast<int>(scene.objects.size());
  if (n < 1 || n > max_objects || n > kMaxObjectsLimit) {
    throw std::invalid_argument("scene: object count out of range");
  }
  std::set<int> ids;
  std::set<std::pair<int, int>> cells;
  for (const Object& o : scene.objects) {
    if (o.id < 0 || o.id >= kMaxObjectsLimit) {
      throw std::invalid_argument("scene: object id out of range");
    }
    if (!ids.insert(o.id).second) {
      throw std::invalid_argument("scene: duplicate object id");
    }
    if (static_cast<int>(o.shape) >= kNumShapes ||
        static_cast<int>(o.color) >= kNumColors ||
        static_cast<int>(o.size) >= kNumSizes) {
      throw std::invalid_argument("scene: attribute out of range");
    }
    const auto [r, c] = o.position;
    if (r < 0 || c < 0 || r >= scene.grid_size || c >= scene.grid_size) {
      throw std::invalid_argument("scene: object outside grid");
    }
    if (!cells.insert({r, c}).second) {
      throw std::invalid_argument("scene: two objects share a cell");
    }
  }
}

// ---------------------------------------------------------------------------

std::string_view predicate_name(Predicate p) {
  return kPredicateNames.at(static_cast<std::size_t>(p));
}

std::optional<Predicate> predicate_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kPredicateNames.size(); ++i) {
    if (kPredicateNames[i] == name) return static_cast<Predicate>(i);
  }
  return std::nullopt;
}

std::string to_string(const VisualFact& f) {
  const auto& [p, a, b] = f.key;
  switch (p) {
    case Predicate::kCountByAttribute: {
      const auto kind = static_cast<AttributeKind>(a);
      return fmt::format("count_by_attribute({},{})={}", kind_name(kind),
                         value_name(kind, b), f.value);
    }
    case Predicate::kHasObject:
      return fmt::format("has_object({},{})={}",
                         value_name(AttributeKind::kShape, a),
                         value_name(AttributeKind::kColor, b),
                         bool_name(f.value));
    case Predicate::kLeftOf:
    case Predicate::kAbove:
      return fmt::format("{}({},{})={}", predicate_name(p), a, b,
                         bool_name(f.value));
    case Predicate::kAttributeOf: {
      const auto kind = static_cast<AttributeKind>(b);
      return fmt::format("attribute_of({},{})={}", a, kind_name(kind),
                         value_name(kind, f.value));
    }
  }
  return {};
}

FactSet::FactSet(std::vector<VisualFact> facts) : facts_(std::move(facts)) {
  std::sort(facts_.begin(), facts_.end());
  for (std::size_t i = 1; i < facts_.size(); ++i) {
    if (facts_[i - 1].key == facts_[i].key) {
      throw std::invalid_argument("FactSet: duplicate fact key " +
                                  to_string(facts_[i]));
    }
  }
}

std::optional<int> FactSet::find(const FactKey& key) const {
  auto it = std::lower_bound(
      facts_.begin(), facts_.end(), key,
      [](const VisualFact& f, const FactKey& k) { return f.key < k; });
  if (it == facts_.end() || it->key != key) return std::nullopt;
  return it->value;
}

FactSet enumerate_facts(const Scene& scene) {
  std::vector<VisualFact> out;
  const auto& objs = scene.objects;
  out.reserve(expected_fact_count(objs.size()));

  for (int cls = 0; cls < kNumAttributeClasses; ++cls) {
    const AttributeKind kind = class_kind(cls);
    const int value = class_value(cls);
    const auto count = std::count_if(objs.begin(), objs.end(), [&](const Object& o) {
      return o.value_of(kind) == value;
    });
    out.push_back({{Predicate::kCountByAttribute, static_cast<int>(kind), value},
                   static_cast<int>(count)});
  }
  for (int s = 0; s < kNumShapes; ++s) {
    for (int c = 0; c < kNumColors; ++c) {
      const bool present = std::any_of(objs.begin(), objs.end(), [&](const Object& o) {
        return static_cast<int>(o.shape) == s && static_cast<int>(o.color) == c;
      });
      out.push_back({{Predicate::kHasObject, s, c}, present ? 1 : 0});
    }
  }
  for (const Object& oi : objs) {
    for (const Object& oj : objs) {
      if (oi.id == oj.id) continue;
      out.push_back({{Predicate::kLeftOf, oi.id, oj.id},
                     oi.position.col < oj.position.col ? 1 : 0});
      out.push_back({{Predicate::kAbove, oi.id, oj.id},
                     oi.position.row < oj.position.row ? 1 : 0});
    }
  }
  for (const Object& o : objs) {
    for (int k = 0; k < kNumAttributeKinds; ++k) {
      const auto kind = static_cast<AttributeKind>(k);
      out.push_back({{Predicate::kAttributeOf, o.id, k}, o.value_of(kind)});
    }
  }
  return FactSet(std::move(out));
}

std::size_t expected_fact_count(std::size_t n) {
  return kNumAttributeClasses + kNumShapes * kNumColors + 2 * n * (n - (n > 0 ? 1 : 0)) +
         kNumAttributeKinds * n;
}

// ---------------------------------------------------------------------------

std::string_view template_name(QuestionTemplate t) {
  return kTemplateNames.at(static_cast<std::size_t>(t));
}

std::optional<QuestionTemplate> template_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kTemplateNames.size(); ++i) {
    if (kTemplateNames[i] == name) return static_cast<QuestionTemplate>(i);
  }
  return std::nullopt;
}

namespace {

int require_fact(const FactSet& facts, const FactKey& key) {
  auto v = facts.find(key);
  if (!v) {
    throw std::invalid_argument("question refers to a fact the scene lacks: " +
                                std::string(predicate_name(key.predicate)));
  }
  return *v;
}

std::string yes_no(bool b) { return b ? "yes" : "no"; }

}  // namespace

std::string answer_from_facts(const Question& q, const FactSet& facts) {
  const auto& [p0, p1, p2] = q.params;
  switch (q.template_id) {
    case QuestionTemplate::kCount:
      return std::to_string(
          require_fact(facts, {Predicate::kCountByAttribute, p0, p1}));
    case QuestionTemplate::kAttributeLookup: {
      const auto kind = static_cast<AttributeKind>(p1);
      return std::string(
          value_name(kind, require_fact(facts, {Predicate::kAttributeOf, p0, p1})));
    }
    case QuestionTemplate::kComparison: {
      const int a = require_fact(facts, {Predicate::kCountByAttribute, p0, p1});
      const int b = require_fact(facts, {Predicate::kCountByAttribute, p0, p2});
      return yes_no(a > b);
    }
    case QuestionTemplate::kRelation: {
      const Predicate pred = p0 == 0 ? Predicate::kLeftOf : Predicate::kAbove;
      return yes_no(require_fact(facts, {pred, p1, p2}) != 0);
    }
  }
  throw std::invalid_argument("unknown question template");
}

Question generate_question(const Scene& scene, QuestionTemplate template_id,
                           std::uint64_t seed) {
  Rng rng(seed);
  const int n = static_cast<int>(scene.objects.size());
  Question q;
  q.template_id = template_id;
  switch (template_id) {
    case QuestionTemplate::kCount: {
      const int cls = static_cast<int>(rng.below(kNumAttributeClasses));
      q.params = {static_cast<int>(class_kind(cls)), class_value(cls), 0};
      break;
    }
    case QuestionTemplate::kAttributeLookup: {
      if (n < 1) throw TemplateNotApplicable("attribute lookup needs an object");
      const int obj = scene.objects[rng.below(static_cast<std::uint64_t>(n))].id;
      q.params = {obj, static_cast<int>(rng.below(kNumAttributeKinds)), 0};
      break;
    }
    case QuestionTemplate::kComparison: {
      const auto kind = static_cast<AttributeKind>(rng.below(kNumAttributeKinds));
      const int nv = num_values(kind);
      const int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(nv)));
      int b = static_cast<int>(rng.below(static_cast<std::uint64_t>(nv - 1)));
      if (b >= a) ++b;
      q.params = {static_cast<int>(kind), a, b};
      break;
    }
    case QuestionTemplate::kRelation: {
      if (n < 2) throw TemplateNotApplicable("relation template needs >= 2 objects");
      const int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
      int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
      if (j >= i) ++j;
      q.params = {static_cast<int>(rng.below(2)), scene.objects[i].id,
                  scene.objects[j].id};
      break;
    }
  }
  q.gold_answer = answer_from_facts(q, enumerate_facts(scene));
  return q;
}

std::string question_text(const Question& q) {
  const auto& [p0, p1, p2] = q.params;
  switch (q.template_id) {
    case QuestionTemplate::kCount: {
      const auto kind = static_cast<AttributeKind>(p0);
      return fmt::format("How many {} objects are there?", value_name(kind, p1));
    }
    case QuestionTemplate::kAttributeLookup:
      return fmt::format("What is the {} of object {}?",
                         kind_name(static_cast<AttributeKind>(p1)), p0);
    case QuestionTemplate::kComparison: {
      const auto kind = static_cast<AttributeKind>(p0);
      return fmt::format("Are there more {} objects than {} objects?",
                         value_name(kind, p1), value_name(kind, p2));
    }
    case QuestionTemplate::kRelation:
      return fmt::format("Is object {} {} object {}?", p1,
                         p0 == 0 ? "left of" : "above", p2);
  }
  return {};
}

// ---------------------------------------------------------------------------

StructuredCaption render_pseudo_gt(const Scene& scene) {
  std::vector<const Object*> objs;
  for (const Object& o : scene.objects) objs.push_back(&o);
  std::sort(objs.begin(), objs.end(),
            [](const Object* x, const Object* y) { return x->id < y->id; });

  std::string text;
  for (const Object* o : objs) {
    text += fmt::format("object {}: {} {} {} at ({},{})\n", o->id,
                        value_name(AttributeKind::kSize, o->value_of(AttributeKind::kSize)),
                        value_name(AttributeKind::kColor, o->value_of(AttributeKind::kColor)),
                        value_name(AttributeKind::kShape, o->value_of(AttributeKind::kShape)),
                        o->position.row, o->position.col);
  }
  std::vector<std::string> relations;
  for (const Object* oi : objs) {
    for (const Object* oj : objs) {
      if (oi->id == oj->id) continue;
      relations.push_back(fmt::format("left_of({},{}) = {}", oi->id, oj->id,
                                      bool_name(oi->position.col < oj->position.col)));
      relations.push_back(fmt::format("above({},{}) = {}", oi->id, oj->id,
                                      bool_name(oi->position.row < oj->position.row)));
    }
  }
  std::sort(relations.begin(), relations.end());
  for (const auto& line : relations) {
    text += line;
    text += '\n';
  }
  return {std::move(text)};
}

FactSet parse_caption(const StructuredCaption& caption) {
  static const std::regex kObjectLine(
      R"(^object (\d+): (\w+) (\w+) (\w+) at \((\d+),(\d+)\)$)");
  static const std::regex kRelationLine(R"(^(left_of|above)\((\d+),(\d+)\) = (true|false)$)");

  std::vector<Object> objs;
  std::vector<VisualFact> relations;
  std::istringstream in(caption.text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::smatch m;
    if (std::regex_match(line, m, kObjectLine)) {
      Object o;
      o.id = std::stoi(m[1]);
      const auto size = value_from_name(AttributeKind::kSize, m[2].str());
      const auto color = value_from_name(AttributeKind::kColor, m[3].str());
      const auto shape = value_from_name(AttributeKind::kShape, m[4].str());
      if (!size || !color || !shape) {
        throw CaptionParseError(fmt::format("caption line {}: unknown attribute", line_no));
      }
      o.size = static_cast<Size>(*size);
      o.color = static_cast<Color>(*color);
      o.shape = static_cast<Shape>(*shape);
      o.position = {std::stoi(m[5]), std::stoi(m[6])};
      objs.push_back(o);
    } else if (std::regex_match(line, m, kRelationLine)) {
      const Predicate p = m[1] == "left_of" ? Predicate::kLeftOf : Predicate::kAbove;
      relations.push_back({{p, std::stoi(m[2]), std::stoi(m[3])}, m[4] == "true" ? 1 : 0});
    } else {
      throw CaptionParseError(fmt::format("caption line {}: unrecognised: {}", line_no, line));
    }
  }
  if (objs.empty()) throw CaptionParseError("caption lists no objects");

  // Counts, presence and attributes follow from the object lines; relations
  // are taken as stated.
  Scene scene;
  scene.objects = objs;
  std::vector<VisualFact> facts;
  for (const VisualFact& f : enumerate_facts(scene)) {
    if (f.key.predicate != Predicate::kLeftOf && f.key.predicate != Predicate::kAbove) {
      facts.push_back(f);
    }
  }
  facts.insert(facts.end(), relations.begin(), relations.end());
  try {
    return FactSet(std::move(facts));
  } catch (const std::invalid_argument& e) {
    throw CaptionParseError(e.what());
  }
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const Scene& scene) {
  nlohmann::json objs = nlohmann::json::array();
  for (const Object& o : scene.objects) {
    objs.push_back({{"obj_id", o.id},
                    {"shape", value_name(AttributeKind::kShape, o.value_of(AttributeKind::kShape))},
                    {"color", value_name(AttributeKind::kColor, o.value_of(AttributeKind::kColor))},
                    {"size", value_name(AttributeKind::kSize, o.value_of(AttributeKind::kSize))},
                    {"position", {o.position.row, o.position.col}}});
  }
  return {{"scene_id", scene.scene_id}, {"grid_size", scene.grid_size}, {"objects", objs}};
}

nlohmann::json to_json(const Question& q) {
  return {{"template_id", template_name(q.template_id)},
          {"params", q.params},
          {"gold_answer", q.gold_answer}};
}

nlohmann::json to_json(const Sample& s) {
  return {{"sample_id", s.sample_id},
          {"scene", to_json(s.scene)},
          {"question", to_json(s.question)},
          {"domain_tag", s.domain_tag}};
}

namespace {

int attr_from_json(const nlohmann::json& j, AttributeKind kind) {
  const auto name = j.at(std::string(kind_name(kind))).get<std::string>();
  auto v = value_from_name(kind, name);
  if (!v) throw std::invalid_argument("unknown " + std::string(kind_name(kind)) + ": " + name);
  return *v;
}

}  // namespace

Scene scene_from_json(const nlohmann::json& j) {
  Scene scene;
  scene.scene_id = j.at("scene_id").get<std::string>();
  scene.grid_size = j.at("grid_size").get<int>();
  for (const auto& jo : j.at("objects")) {
    Object o;
    o.id = jo.at("obj_id").get<int>();
    o.shape = static_cast<Shape>(attr_from_json(jo, AttributeKind::kShape));
    o.color = static_cast<Color>(attr_from_json(jo, AttributeKind::kColor));
    o.size = static_cast<Size>(attr_from_json(jo, AttributeKind::kSize));
    const auto& pos = jo.at("position");
    o.position = {pos.at(0).get<int>(), pos.at(1).get<int>()};
    scene.objects.push_back(o);
  }
  return scene;
}

Question question_from_json(const nlohmann::json& j) {
  Question q;
  const auto name = j.at("template_id").get<std::string>();
  auto t = template_from_name(name);
  if (!t) throw std::invalid_argument("unknown question template: " + name);
  q.template_id = *t;
  q.params = j.at("params").get<std::array<int, 3>>();
  q.gold_answer = j.at("gold_answer").get<std::string>();
  return q;
}

Sample sample_from_json(const nlohmann::json& j) {
  return {j.at("sample_id").get<std::string>(), scene_from_json(j.at("scene")),
          question_from_json(j.at("question")), j.at("domain_tag").get<std::string>()};
}

}  // namespace palmr
