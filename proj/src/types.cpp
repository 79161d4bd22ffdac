#include "groundcount/types.hpp"

#include <array>
#include <utility>

namespace groundcount {

namespace {

constexpr std::array<std::pair<Task, std::string_view>, 5> kTaskNames{{
    {Task::object, "object"},
    {Task::attribute, "attribute"},
    {Task::positional, "positional"},
    {Task::counting, "counting"},
    {Task::sentiment, "sentiment"},
}};

constexpr std::array<std::pair<Variant, std::string_view>, 4> kVariantNames{{
    {Variant::base, "base"},
    {Variant::sec, "sec"},
    {Variant::icc, "icc"},
    {Variant::ccs, "ccs"},
}};

template <typename E, std::size_t N>
std::string_view lookup_name(const std::array<std::pair<E, std::string_view>, N>& table, E e) {
    for (const auto& [value, name] : table)
        if (value == e) return name;
    return "?";
}

template <typename E, std::size_t N>
std::optional<E> lookup_value(const std::array<std::pair<E, std::string_view>, N>& table,
                              std::string_view s) {
    for (const auto& [value, name] : table)
        if (name == s) return value;
    return std::nullopt;
}

}  // namespace

std::string_view to_string(Task t) { return lookup_name(kTaskNames, t); }
std::string_view to_string(Variant v) { return lookup_name(kVariantNames, v); }
std::string_view to_string(Answer a) { return a == Answer::yes ? "yes" : "no"; }

std::string_view to_string(Verdict v) {
    switch (v) {
        case Verdict::yes: return "yes";
        case Verdict::no: return "no";
        case Verdict::indeterminate: return "indeterminate";
    }
    return "?";
}

std::optional<Task> parse_task(std::string_view s) { return lookup_value(kTaskNames, s); }
std::optional<Variant> parse_variant(std::string_view s) { return lookup_value(kVariantNames, s); }

std::optional<Answer> parse_answer(std::string_view s) {
    if (s == "yes") return Answer::yes;
    if (s == "no") return Answer::no;
    return std::nullopt;
}

}  // namespace groundcount
