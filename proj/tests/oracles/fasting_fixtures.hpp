#pragma once

// Scripted meal schedules over a fixed 3-day glucose record, each paired with the fasting
// windows a person would mark by hand: every inter-meal gap strictly longer than 8 h that
// lies inside the record, from the first whole minute after the earlier meal ends to the
// last whole minute before the next meal starts (grid minutes counted from 00:00 of day 1).

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

struct MealSpan {
    const char* start;
    const char* end;
};

struct FastingSchedule {
    std::string name;
    std::vector<MealSpan> meals;
    std::vector<std::pair<std::size_t, std::size_t>> windows;  // inclusive grid minutes
};

inline constexpr std::size_t kScheduleRecordMinutes = 3 * 1440;  // record 2023-06-01T00:00Z .. 06-03T23:59Z

inline std::vector<FastingSchedule> fasting_schedules() {
    return {
        {"overnight 22:00 to 09:00",
         {{"2023-06-01T21:30:00Z", "2023-06-01T22:00:00Z"}, {"2023-06-02T09:00:00Z", "2023-06-02T09:20:00Z"}},
         {{1320, 1980}}},
        {"gap of exactly 8 h",
         {{"2023-06-01T10:00:00Z", "2023-06-01T10:30:00Z"}, {"2023-06-01T18:30:00Z", "2023-06-01T19:00:00Z"}},
         {}},
        {"gap of 8 h and one minute",
         {{"2023-06-01T10:00:00Z", "2023-06-01T10:30:00Z"}, {"2023-06-01T18:31:00Z", "2023-06-01T19:00:00Z"}},
         {{630, 1111}}},
        {"single meal at the record start",
         {{"2023-06-01T00:10:00Z", "2023-06-01T00:40:00Z"}},
         {}},
        {"three days of regular meals",
         {{"2023-06-01T07:30:00Z", "2023-06-01T08:00:00Z"}, {"2023-06-01T12:30:00Z", "2023-06-01T13:00:00Z"},
          {"2023-06-01T19:00:00Z", "2023-06-01T19:40:00Z"}, {"2023-06-02T07:30:00Z", "2023-06-02T08:00:00Z"},
          {"2023-06-02T12:30:00Z", "2023-06-02T13:00:00Z"}, {"2023-06-02T19:00:00Z", "2023-06-02T19:40:00Z"},
          {"2023-06-03T07:30:00Z", "2023-06-03T08:00:00Z"}},
         {{1180, 1890}, {2620, 3330}}},
        {"late snack shortens the night below 8 h",
         {{"2023-06-01T19:00:00Z", "2023-06-01T19:30:00Z"}, {"2023-06-02T00:30:00Z", "2023-06-02T00:45:00Z"},
          {"2023-06-02T08:30:00Z", "2023-06-02T09:00:00Z"}},
         {}},
        {"meal ends between grid minutes",
         {{"2023-06-01T20:00:00Z", "2023-06-01T20:15:30Z"}, {"2023-06-02T06:00:45Z", "2023-06-02T06:30:00Z"}},
         {{1216, 1800}}},
        {"next meal lies beyond the record end",
         {{"2023-06-03T15:00:00Z", "2023-06-03T15:30:00Z"}, {"2023-06-04T08:00:00Z", "2023-06-04T08:30:00Z"}},
         {}},
        {"earlier meal lies before the record start",
         {{"2023-05-31T20:00:00Z", "2023-05-31T20:30:00Z"}, {"2023-06-01T07:00:00Z", "2023-06-01T07:30:00Z"}},
         {}},
        {"day-long fast between two nights",
         {{"2023-06-01T18:00:00Z", "2023-06-01T18:30:00Z"}, {"2023-06-02T20:00:00Z", "2023-06-02T20:30:00Z"},
          {"2023-06-03T05:00:00Z", "2023-06-03T05:20:00Z"}, {"2023-06-03T14:00:00Z", "2023-06-03T14:30:00Z"}},
         {{1110, 2640}, {2670, 3180}, {3200, 3720}}},
    };
}

}  // namespace oracle
