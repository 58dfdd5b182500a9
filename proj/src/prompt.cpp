#include "dermgen/prompt.hpp"

#include "dermgen/error.hpp"
#include "dermgen/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace dermgen {

using nlohmann::json;

const char* grade_name(FitzpatrickGrade g) {
    static const char* names[kFitzpatrickGradeCount] = {"I", "II", "III", "IV", "V", "VI"};
    return names[static_cast<int>(g)];
}

std::optional<FitzpatrickGrade> parse_grade(const std::string& name) {
    for (int i = 0; i < kFitzpatrickGradeCount; ++i)
        if (name == grade_name(static_cast<FitzpatrickGrade>(i)))
            return static_cast<FitzpatrickGrade>(i);
    return std::nullopt;
}

const std::array<std::string, kFitzpatrickGradeCount>& default_tone_descriptors() {
    static const std::array<std::string, kFitzpatrickGradeCount> d = {
        "very fair skin", "fair skin",       "light brown skin",
        "olive skin",     "dark brown skin", "deeply pigmented dark skin",
    };
    return d;
}

bool is_valid_label(const std::string& label) {
    if (label.empty()) return false;
    return std::all_of(label.begin(), label.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
    });
}

static std::string trim(const std::string& s) {
    const char* ws = " \t\r\n\f\v";
    size_t a = s.find_first_not_of(ws);
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(ws);
    return s.substr(a, b - a + 1);
}

std::string render_prompt(const PromptSlots& slots) {
    std::string out;
    auto append = [&out](const std::string& part) {
        if (part.empty()) return;
        if (!out.empty()) out += ", ";
        out += part;
    };
    append(slots.visual_cues);
    append(slots.sensation);
    append(slots.physical_location);
    append(slots.skin_tone.descriptor);
    return out;
}

namespace {

// Byte offset -> 1-based line:column, for parse-error messages.
std::string line_pos(const std::string& text, size_t byte) {
    size_t line = 1, col = 1;
    for (size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    std::ostringstream os;
    os << "line " << line << ", column " << col;
    return os.str();
}

std::vector<std::string> parse_pool(const json& cond, const char* field, const std::string& where,
                                    bool required_non_empty) {
    std::vector<std::string> pool;
    if (!cond.contains(field)) {
        if (required_non_empty)
            raise(Errc::empty_pool, where + ": missing or empty '" + field + "' list");
        return pool;
    }
    const json& arr = cond.at(field);
    if (!arr.is_array())
        raise(Errc::malformed_file, where + ": '" + field + "' must be a list of strings");
    for (const json& item : arr) {
        if (!item.is_string())
            raise(Errc::malformed_file, where + ": '" + field + "' entries must be strings");
        std::string s = trim(item.get<std::string>());
        if (s.empty())
            raise(Errc::malformed_file, where + ": '" + field + "' contains an empty entry");
        if (s.find('\n') != std::string::npos || s.find('\r') != std::string::npos)
            raise(Errc::malformed_file, where + ": '" + field + "' entry contains a newline");
        pool.push_back(std::move(s));
    }
    if (required_non_empty && pool.empty())
        raise(Errc::empty_pool, where + ": missing or empty '" + field + "' list");
    return pool;
}

} // namespace

std::vector<ConditionSpec> parse_spec_text(const std::string& text, const std::string& origin) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        raise(Errc::malformed_file,
              origin + " (" + line_pos(text, e.byte > 0 ? e.byte - 1 : 0) + "): " + e.what());
    }
    if (!doc.is_object() || !doc.contains("conditions") || !doc.at("conditions").is_array())
        raise(Errc::malformed_file, origin + ": expected a top-level object with a 'conditions' list");

    // Spec-wide tone descriptor overrides; grades not listed keep defaults.
    std::array<std::string, kFitzpatrickGradeCount> descriptors = default_tone_descriptors();
    if (doc.contains("tone_descriptors")) {
        const json& map = doc.at("tone_descriptors");
        if (!map.is_object())
            raise(Errc::malformed_file, origin + ": 'tone_descriptors' must map grade names to text");
        for (auto it = map.begin(); it != map.end(); ++it) {
            auto grade = parse_grade(it.key());
            if (!grade)
                raise(Errc::malformed_file, origin + ": unknown Fitzpatrick grade '" + it.key() + "'");
            if (!it.value().is_string())
                raise(Errc::malformed_file, origin + ": descriptor for grade " + it.key() + " must be a string");
            std::string d = trim(it.value().get<std::string>());
            if (d.empty())
                raise(Errc::malformed_file, origin + ": descriptor for grade " + it.key() + " is empty");
            descriptors[static_cast<int>(*grade)] = d;
        }
    }

    std::vector<ConditionSpec> specs;
    std::set<std::string> seen_labels;
    size_t index = 0;
    for (const json& cond : doc.at("conditions")) {
        std::ostringstream where_base;
        where_base << origin << ": condition #" << index;
        ++index;

        if (!cond.is_object())
            raise(Errc::malformed_file, where_base.str() + " is not an object");

        ConditionSpec spec;
        if (!cond.contains("label") || !cond.at("label").is_string())
            raise(Errc::missing_field, where_base.str() + ": missing field 'label'");
        spec.label = trim(cond.at("label").get<std::string>());
        std::string where = where_base.str() + " ('" + spec.label + "')";
        if (!is_valid_label(spec.label))
            raise(Errc::malformed_file, where + ": label must match [a-z0-9_]+");
        if (!seen_labels.insert(spec.label).second)
            raise(Errc::duplicate_label, "label '" + spec.label + "' appears more than once in " + origin);

        if (!cond.contains("display_name") || !cond.at("display_name").is_string())
            raise(Errc::missing_field, where + ": missing field 'display_name'");
        spec.display_name = trim(cond.at("display_name").get<std::string>());
        if (spec.display_name.empty())
            raise(Errc::missing_field, where + ": missing field 'display_name'");

        spec.visual_cues_pool = parse_pool(cond, "visual_cues", where, /*required_non_empty=*/true);
        spec.sensation_pool = parse_pool(cond, "sensations", where, /*required_non_empty=*/false);
        spec.location_pool = parse_pool(cond, "locations", where, /*required_non_empty=*/true);

        if (cond.contains("tones")) {
            const json& tones = cond.at("tones");
            if (!tones.is_array() || tones.empty())
                raise(Errc::malformed_file, where + ": 'tones' must be a non-empty list of grade names");
            std::set<int> seen_grades;
            for (const json& t : tones) {
                if (!t.is_string())
                    raise(Errc::malformed_file, where + ": 'tones' entries must be grade names (I-VI)");
                auto grade = parse_grade(t.get<std::string>());
                if (!grade)
                    raise(Errc::malformed_file,
                          where + ": unknown Fitzpatrick grade '" + t.get<std::string>() + "'");
                if (!seen_grades.insert(static_cast<int>(*grade)).second)
                    raise(Errc::malformed_file, where + ": duplicate tone grade in 'tones'");
                spec.tones.push_back({*grade, descriptors[static_cast<int>(*grade)]});
            }
        } else {
            for (int g = 0; g < kFitzpatrickGradeCount; ++g)
                spec.tones.push_back({static_cast<FitzpatrickGrade>(g), descriptors[g]});
        }

        specs.push_back(std::move(spec));
    }
    return specs;
}

std::vector<ConditionSpec> parse_spec_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(Errc::malformed_file, "cannot open spec file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_spec_text(ss.str(), path);
}

std::vector<PromptInstantiation> enumerate_instantiations(const ConditionSpec& spec,
                                                          int per_condition,
                                                          uint64_t seed) {
    require(per_condition >= 1, Errc::invalid_argument, "per_condition must be >= 1");
    require(!spec.visual_cues_pool.empty(), Errc::empty_pool,
            "condition '" + spec.label + "' has an empty visual_cues pool");
    require(!spec.location_pool.empty(), Errc::empty_pool,
            "condition '" + spec.label + "' has an empty locations pool");
    require(!spec.tones.empty(), Errc::invalid_argument,
            "condition '" + spec.label + "' has no tones to cover");

    const size_t tone_count = spec.tones.size();
    Rng rng(derive_seed(seed, "prompts", fnv1a64(spec.label)));

    std::vector<PromptInstantiation> out;
    out.reserve(static_cast<size_t>(per_condition));
    for (int i = 0; i < per_condition; ++i) {
        // Round-robin tone assignment keeps per-tone counts within one of
        // each other for any per_condition, independent of the draws below.
        const SkinTone& tone = spec.tones[static_cast<size_t>(i) % tone_count];

        SlotIndices idx;
        idx.visual = static_cast<int>(rng.index(spec.visual_cues_pool.size()));
        idx.sensation = spec.sensation_pool.empty()
                            ? -1
                            : static_cast<int>(rng.index(spec.sensation_pool.size()));
        idx.location = static_cast<int>(rng.index(spec.location_pool.size()));
        idx.tone = static_cast<int>(static_cast<size_t>(i) % tone_count);

        PromptSlots slots;
        slots.visual_cues = spec.visual_cues_pool[static_cast<size_t>(idx.visual)];
        slots.sensation = idx.sensation < 0 ? "" : spec.sensation_pool[static_cast<size_t>(idx.sensation)];
        slots.physical_location = spec.location_pool[static_cast<size_t>(idx.location)];
        slots.skin_tone = tone;

        PromptInstantiation inst;
        inst.condition_label = spec.label;
        inst.slots = slots;
        inst.rendered = render_prompt(slots);
        inst.slot_indices = idx;
        out.push_back(std::move(inst));
    }
    return out;
}

} // namespace dermgen
