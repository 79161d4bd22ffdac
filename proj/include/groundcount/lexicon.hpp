#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace groundcount {

/// Maps question nouns (singular, possibly multi-word) onto detector categories.
class Lexicon {
public:
    Lexicon() = default;

    /// The 80 COCO category names plus common synonyms (e.g. "people" -> "person").
    static Lexicon coco();

    void add(std::string noun, std::string category);

    /// Looks `phrase` up as-is, then in singular form.
    std::optional<std::string> lookup(std::string_view phrase) const;

    /// Longest entry starting at `words[pos]`; returns (category, word count).
    std::optional<std::pair<std::string, std::size_t>> match_at(const std::vector<std::string>& words,
                                                                std::size_t pos) const;

    std::size_t size() const { return entries_.size(); }

private:
    std::map<std::string, std::string, std::less<>> entries_;
    std::size_t max_words_ = 1;
};

/// Rule-based English singularization, with an irregular-plural table.
std::string singularize(std::string_view word);

extern const std::vector<std::string> kCocoCategories;

}  // namespace groundcount
