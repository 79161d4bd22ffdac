#include "groundcount/lexicon.hpp"

#include <algorithm>
#include <array>

namespace groundcount {

const std::vector<std::string> kCocoCategories = {
    "person",        "bicycle",      "car",          "motorcycle",    "airplane",
    "bus",           "train",        "truck",        "boat",          "traffic light",
    "fire hydrant",  "stop sign",    "parking meter", "bench",        "bird",
    "cat",           "dog",          "horse",        "sheep",         "cow",
    "elephant",      "bear",         "zebra",        "giraffe",       "backpack",
    "umbrella",      "handbag",      "tie",          "suitcase",      "frisbee",
    "skis",          "snowboard",    "sports ball",  "kite",          "baseball bat",
    "baseball glove", "skateboard",  "surfboard",    "tennis racket", "bottle",
    "wine glass",    "cup",          "fork",         "knife",         "spoon",
    "bowl",          "banana",       "apple",        "sandwich",      "orange",
    "broccoli",      "carrot",       "hot dog",      "pizza",         "donut",
    "cake",          "chair",        "couch",        "potted plant",  "bed",
    "dining table",  "toilet",       "tv",           "laptop",        "mouse",
    "remote",        "keyboard",     "cell phone",   "microwave",     "oven",
    "toaster",       "sink",         "refrigerator", "book",          "clock",
    "vase",          "scissors",     "teddy bear",   "hair drier",    "toothbrush",
};

namespace {

constexpr std::array<std::pair<std::string_view, std::string_view>, 15> kIrregular{{
    {"buses", "bus"},
    {"people", "person"},
    {"persons", "person"},
    {"men", "man"},
    {"women", "woman"},
    {"children", "child"},
    {"mice", "mouse"},
    {"knives", "knife"},
    {"leaves", "leaf"},
    {"geese", "goose"},
    {"feet", "foot"},
    {"teeth", "tooth"},
    {"sheep", "sheep"},
    {"scissors", "scissors"},
    {"skis", "skis"},
}};

constexpr std::array<std::pair<std::string_view, std::string_view>, 32> kSynonyms{{
    {"man", "person"},          {"woman", "person"},       {"child", "person"},
    {"boy", "person"},          {"girl", "person"},        {"kid", "person"},
    {"player", "person"},       {"skier", "person"},       {"surfer", "person"},
    {"skateboarder", "person"}, {"pedestrian", "person"},  {"bike", "bicycle"},
    {"motorbike", "motorcycle"}, {"plane", "airplane"},    {"aeroplane", "airplane"},
    {"jet", "airplane"},        {"ski", "skis"},           {"pair of skis", "skis"},
    {"ball", "sports ball"},    {"racket", "tennis racket"}, {"doughnut", "donut"},
    {"sofa", "couch"},          {"plant", "potted plant"}, {"table", "dining table"},
    {"television", "tv"},       {"tv set", "tv"},          {"phone", "cell phone"},
    {"cellphone", "cell phone"}, {"fridge", "refrigerator"}, {"teddy", "teddy bear"},
    {"hair dryer", "hair drier"}, {"puppy", "dog"},
}};

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

// Candidate singular forms of the last word, most specific first.
std::vector<std::string> singular_candidates(std::string_view phrase) {
    const auto space = phrase.rfind(' ');
    const std::string head(space == std::string_view::npos ? "" : phrase.substr(0, space + 1));
    const std::string_view last = space == std::string_view::npos ? phrase : phrase.substr(space + 1);

    std::vector<std::string> forms;
    for (const auto& [plural, singular] : kIrregular)
        if (last == plural) forms.emplace_back(singular);
    if (ends_with(last, "ies") && last.size() > 3) {
        forms.push_back(std::string(last.substr(0, last.size() - 3)) + "y");
        forms.emplace_back(last.substr(0, last.size() - 1));  // ties -> tie
    }
    if (ends_with(last, "ves") && last.size() > 3)
        forms.push_back(std::string(last.substr(0, last.size() - 3)) + "f");
    if (ends_with(last, "es") && last.size() > 2) forms.emplace_back(last.substr(0, last.size() - 2));
    if (ends_with(last, "s") && !ends_with(last, "ss") && last.size() > 1)
        forms.emplace_back(last.substr(0, last.size() - 1));

    for (auto& f : forms) f = head + f;
    return forms;
}

}  // namespace

std::string singularize(std::string_view word) {
    for (const auto& [plural, singular] : kIrregular)
        if (word == plural) return std::string(singular);
    if (ends_with(word, "ies") && word.size() > 4)
        return std::string(word.substr(0, word.size() - 3)) + "y";
    for (std::string_view suffix : {"ches", "shes", "sses", "xes", "zes"})
        if (ends_with(word, suffix)) return std::string(word.substr(0, word.size() - 2));
    if (ends_with(word, "s") && !ends_with(word, "ss") && word.size() > 1)
        return std::string(word.substr(0, word.size() - 1));
    return std::string(word);
}

Lexicon Lexicon::coco() {
    Lexicon lex;
    for (const auto& c : kCocoCategories) lex.add(c, c);
    for (const auto& [noun, category] : kSynonyms) lex.add(std::string(noun), std::string(category));
    return lex;
}

void Lexicon::add(std::string noun, std::string category) {
    max_words_ = std::max<std::size_t>(max_words_, 1 + std::count(noun.begin(), noun.end(), ' '));
    entries_.insert_or_assign(std::move(noun), std::move(category));
}

std::optional<std::string> Lexicon::lookup(std::string_view phrase) const {
    if (auto it = entries_.find(phrase); it != entries_.end()) return it->second;
    for (const auto& form : singular_candidates(phrase))
        if (auto it = entries_.find(form); it != entries_.end()) return it->second;
    return std::nullopt;
}

std::optional<std::pair<std::string, std::size_t>> Lexicon::match_at(
    const std::vector<std::string>& words, std::size_t pos) const {
    for (std::size_t len = std::min(max_words_, words.size() - std::min(pos, words.size())); len >= 1;
         --len) {
        std::string phrase = words[pos];
        for (std::size_t k = 1; k < len; ++k) phrase += " " + words[pos + k];
        if (auto cat = lookup(phrase)) return std::make_pair(*cat, len);
    }
    return std::nullopt;
}

}  // namespace groundcount
