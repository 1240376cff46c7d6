#include "sthd/neighbor_index.hpp"

#include <charconv>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace sthd {

NeighborIndex::NeighborIndex(std::size_t k, std::vector<std::vector<Neighbor>> lists)
    : k_(k), lists_(std::move(lists)) {
    for (std::size_t c = 0; c < lists_.size(); ++c) {
        if (lists_[c].size() != k_) {
            throw std::invalid_argument("neighbor list of channel " + std::to_string(c) + " has " +
                                        std::to_string(lists_[c].size()) + " entries, expected " +
                                        std::to_string(k_));
        }
        for (const auto& n : lists_[c]) {
            if (n.channel == c) {
                throw std::invalid_argument("channel " + std::to_string(c) + " lists itself as a neighbor");
            }
            if (n.channel >= lists_.size()) {
                throw std::invalid_argument("neighbor channel " + std::to_string(n.channel) +
                                            " out of range");
            }
        }
    }
}

NeighborIndex NeighborIndex::empty(std::size_t num_channels) {
    return NeighborIndex(0, std::vector<std::vector<Neighbor>>(num_channels));
}

const std::vector<Neighbor>& NeighborIndex::of(std::size_t channel) const {
    if (channel >= lists_.size()) {
        throw std::out_of_range("no neighbor entry for channel " + std::to_string(channel));
    }
    return lists_[channel];
}

std::string NeighborIndex::to_text(const std::vector<std::string>& channel_ids) const {
    if (channel_ids.size() != lists_.size()) {
        throw std::invalid_argument("channel id count does not match neighbor index");
    }
    std::ostringstream out;
    out.precision(17);
    for (std::size_t c = 0; c < lists_.size(); ++c) {
        out << channel_ids[c] << ':';
        for (std::size_t i = 0; i < lists_[c].size(); ++i) {
            out << (i ? ", " : " ") << channel_ids[lists_[c][i].channel] << '='
                << lists_[c][i].correlation;
        }
        out << '\n';
    }
    return out.str();
}

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace

NeighborIndex NeighborIndex::from_text(std::string_view text,
                                       const std::vector<std::string>& channel_ids) {
    std::unordered_map<std::string, std::size_t> lookup;
    for (std::size_t c = 0; c < channel_ids.size(); ++c) lookup.emplace(channel_ids[c], c);
    auto resolve = [&](std::string_view id, std::size_t line_no) {
        const auto it = lookup.find(std::string(id));
        if (it == lookup.end()) {
            throw std::invalid_argument("line " + std::to_string(line_no) + ": unknown channel id '" +
                                        std::string(id) + "'");
        }
        return it->second;
    };

    std::vector<std::vector<Neighbor>> lists(channel_ids.size());
    std::vector<bool> seen(channel_ids.size(), false);
    std::size_t k = 0;
    bool first = true;
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        const auto line = trim(text.substr(pos, nl == text.npos ? text.npos : nl - pos));
        pos = nl == text.npos ? text.size() : nl + 1;
        ++line_no;
        if (line.empty()) continue;
        const auto colon = line.rfind(':');
        if (colon == line.npos) {
            throw std::invalid_argument("line " + std::to_string(line_no) + ": missing ':'");
        }
        const auto channel = resolve(trim(line.substr(0, colon)), line_no);
        if (seen[channel]) {
            throw std::invalid_argument("line " + std::to_string(line_no) + ": channel listed twice");
        }
        seen[channel] = true;
        auto rest = trim(line.substr(colon + 1));
        std::vector<Neighbor> list;
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            const auto item = trim(rest.substr(0, comma));
            rest = comma == rest.npos ? std::string_view{} : trim(rest.substr(comma + 1));
            const auto eq = item.rfind('=');
            if (eq == item.npos) {
                throw std::invalid_argument("line " + std::to_string(line_no) + ": expected id=corr");
            }
            const auto value_text = trim(item.substr(eq + 1));
            double value = 0.0;
            const auto [ptr, ec] =
                std::from_chars(value_text.data(), value_text.data() + value_text.size(), value);
            if (ec != std::errc() || ptr != value_text.data() + value_text.size()) {
                throw std::invalid_argument("line " + std::to_string(line_no) + ": bad correlation '" +
                                            std::string(value_text) + "'");
            }
            list.push_back({resolve(trim(item.substr(0, eq)), line_no), value});
        }
        if (first) {
            k = list.size();
            first = false;
        }
        lists[channel] = std::move(list);
    }
    for (std::size_t c = 0; c < seen.size(); ++c) {
        if (!seen[c]) throw std::invalid_argument("no neighbor line for channel '" + channel_ids[c] + "'");
    }
    return NeighborIndex(k, std::move(lists));
}

}  // namespace sthd
