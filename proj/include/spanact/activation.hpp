#pragma once

// Activation tokens, sequences and the sliding activation window.
//
// One position is one second of stream time (1 FPS). Spans are reported with
// inclusive ends, both for window indices and for stream seconds.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spanact/error.hpp"

namespace spanact {

enum class ActivationToken : std::uint8_t { Inactive = 0, Active = 1, Masked = 2 };

using ActivationSequence = std::vector<ActivationToken>;

[[nodiscard]] constexpr char to_char(ActivationToken token) noexcept {
    switch (token) {
    case ActivationToken::Inactive: return '0';
    case ActivationToken::Active: return '1';
    case ActivationToken::Masked: return 'M';
    }
    return '?';
}

[[nodiscard]] inline ActivationToken token_from_char(char c) {
    switch (c) {
    case '0': return ActivationToken::Inactive;
    case '1': return ActivationToken::Active;
    case 'M': return ActivationToken::Masked;
    default: throw InvalidArgument(std::string("invalid activation token '") + c + "'");
    }
}

// Text form over the alphabet {0,1,M}, e.g. "0011MM10".
[[nodiscard]] inline std::string to_string(const ActivationSequence& seq) {
    std::string out;
    out.reserve(seq.size());
    for (auto token : seq) {
        out.push_back(to_char(token));
    }
    return out;
}

[[nodiscard]] inline ActivationSequence parse_sequence(std::string_view text) {
    ActivationSequence seq;
    seq.reserve(text.size());
    for (char c : text) {
        seq.push_back(token_from_char(c));
    }
    return seq;
}

[[nodiscard]] inline std::size_t count_masked(const ActivationSequence& seq) noexcept {
    std::size_t n = 0;
    for (auto token : seq) {
        n += token == ActivationToken::Masked ? 1 : 0;
    }
    return n;
}

[[nodiscard]] inline bool is_resolved(const ActivationSequence& seq) noexcept {
    return count_masked(seq) == 0;
}

struct ActivationWindow {
    ActivationSequence seq;
    // Resolved position: probability of its resolved class at last evaluation.
    // Masked position: most recent predicted probability of Active.
    std::vector<double> probs;
    std::size_t capacity = 1;
    // Stream second of the newest position; unset while the window is empty.
    std::optional<std::int64_t> anchor;

    [[nodiscard]] std::size_t size() const noexcept { return seq.size(); }
    [[nodiscard]] bool empty() const noexcept { return seq.empty(); }
    [[nodiscard]] bool full() const noexcept { return seq.size() == capacity; }

    // Stream second held by window index `i`. Requires a set anchor.
    [[nodiscard]] std::int64_t time_of(std::size_t i) const {
        return anchor.value() - static_cast<std::int64_t>(seq.size()) + 1 + static_cast<std::int64_t>(i);
    }
};

struct EventSpan {
    std::int64_t start_s = 0; // inclusive
    std::int64_t end_s = 0;   // inclusive
    int label = 0;

    [[nodiscard]] std::int64_t length() const noexcept { return end_s - start_s + 1; }
    friend bool operator==(const EventSpan&, const EventSpan&) = default;
};

inline void validate(const EventSpan& span) {
    if (span.start_s < 0 || span.end_s < span.start_s) {
        throw InvalidArgument("invalid event span [" + std::to_string(span.start_s) + ", " +
                              std::to_string(span.end_s) + "]");
    }
}

// Inclusive index range inside a sequence.
struct IndexSpan {
    std::size_t start = 0;
    std::size_t end = 0;

    [[nodiscard]] std::size_t length() const noexcept { return end - start + 1; }
    friend bool operator==(const IndexSpan&, const IndexSpan&) = default;
};

struct TriggerDecision {
    bool fired = false;
    std::int64_t time_s = -1;
    std::size_t span_len = 0;
};

[[nodiscard]] inline ActivationWindow new_window(std::size_t capacity) {
    if (capacity == 0) {
        throw InvalidArgument("activation window capacity must be >= 1");
    }
    ActivationWindow w;
    w.capacity = capacity;
    return w;
}

// Advance the window by one second: evict the oldest position when full and
// append a Masked slot. Carried positions keep their tokens and probabilities.
[[nodiscard]] inline ActivationWindow shift_append(ActivationWindow window) {
    if (window.seq.size() >= window.capacity) {
        const auto drop = window.seq.size() - window.capacity + 1;
        window.seq.erase(window.seq.begin(), window.seq.begin() + static_cast<std::ptrdiff_t>(drop));
        window.probs.erase(window.probs.begin(), window.probs.begin() + static_cast<std::ptrdiff_t>(drop));
    }
    window.seq.push_back(ActivationToken::Masked);
    window.probs.push_back(0.5);
    if (window.anchor) {
        *window.anchor += 1;
    }
    return window;
}

// Maximal runs of Active tokens, in order.
[[nodiscard]] inline std::vector<IndexSpan> active_spans(const ActivationSequence& seq) {
    std::vector<IndexSpan> spans;
    bool in_run = false;
    std::size_t run_start = 0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        switch (seq[i]) {
        case ActivationToken::Masked:
            throw UnresolvedSequence("active_spans: Masked token at index " + std::to_string(i));
        case ActivationToken::Active:
            if (!in_run) {
                in_run = true;
                run_start = i;
            }
            break;
        case ActivationToken::Inactive:
            if (in_run) {
                spans.push_back({run_start, i - 1});
                in_run = false;
            }
            break;
        }
    }
    if (in_run) {
        spans.push_back({run_start, seq.size() - 1});
    }
    return spans;
}

// Fires when the Active run ending at the newest position is at least `gamma` long.
[[nodiscard]] inline TriggerDecision check_trigger(const ActivationWindow& window, std::size_t gamma) {
    if (gamma == 0) {
        throw InvalidArgument("gamma must be >= 1");
    }
    if (!is_resolved(window.seq)) {
        throw UnresolvedSequence("check_trigger on a window with Masked positions");
    }
    std::size_t run = 0;
    for (auto it = window.seq.rbegin(); it != window.seq.rend() && *it == ActivationToken::Active; ++it) {
        ++run;
    }
    return TriggerDecision{run >= gamma, window.anchor.value_or(-1), run};
}

} // namespace spanact
