#![allow(dead_code)]

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use opensql::gateway::{Completer, GatewayError, ReplayStore};
use opensql::prompt::PromptBundle;
use rusqlite::Connection;
use serde_json::json;

pub const MODEL: &str = "fixture-model";

fn create_db(root: &Path, id: &str, ddl: &str, descriptions: &[(&str, &str)]) {
    let dir = root.join("databases").join(id);
    let desc_dir = dir.join("database_description");
    fs::create_dir_all(&desc_dir).unwrap();
    let path = dir.join(format!("{id}.sqlite"));
    let _ = fs::remove_file(&path);
    let conn = Connection::open(&path).unwrap();
    conn.execute_batch(ddl).unwrap();
    for (table, csv) in descriptions {
        fs::write(desc_dir.join(format!("{table}.csv")), csv).unwrap();
    }
}

/// Two tables, continents and countries, joined by one foreign key.
pub fn build_world(root: &Path) {
    create_db(
        root,
        "world",
        "CREATE TABLE continents (ContId int PRIMARY KEY, Continent text);
         CREATE TABLE countries (
             CountryId int PRIMARY KEY,
             CountryName text,
             Continent int,
             FOREIGN KEY (Continent) REFERENCES continents (ContId)
         );
         INSERT INTO continents VALUES (1, 'Africa'), (2, 'Asia'), (3, 'Europe');
         INSERT INTO countries VALUES
             (1, 'Egypt', 1), (2, 'Kenya', 1), (3, 'Japan', 2), (4, 'India', 2), (5, 'China', 2),
             (6, 'France', 3), (7, 'Spain', 3), (8, 'Nigeria', 1), (9, 'Ghana', 1);",
        &[
            (
                "continents",
                "original_column_name,column_name,column_description,data_format,value_description\n\
                 ContId,,continent id,integer,\n\
                 Continent,,continent name,text,\n",
            ),
            (
                "countries",
                "original_column_name,column_name,column_description,data_format,value_description\n\
                 CountryId,,,integer,\n\
                 CountryName,,name of the country,text,\n\
                 Continent,,continent id of the country,integer,\n",
            ),
        ],
    );
}

pub fn build_school(root: &Path) {
    create_db(
        root,
        "school",
        "CREATE TABLE classes (ClassId int PRIMARY KEY, Title text, Teacher text);
         CREATE TABLE students (
             StudentId int PRIMARY KEY,
             Name text,
             Grade int,
             ClassId int REFERENCES classes (ClassId)
         );
         INSERT INTO classes VALUES (1, 'Algebra', 'Moore'), (2, 'Biology', 'Lee');
         INSERT INTO students VALUES
             (1, 'Ann', 10, 1), (2, 'Bob', 11, 2), (3, 'Cid', 10, 2),
             (4, 'Dee', 12, 1), (5, 'Eve', 11, 2), (6, 'Fay', 10, 1);",
        &[(
            "students",
            "original_column_name,column_name,column_description,data_format,value_description\n\
             Name,,student name,text,\n\
             Grade,,school grade,integer,\n",
        )],
    );
}

pub struct Question {
    pub id: i64,
    pub db: &'static str,
    pub question: &'static str,
    pub evidence: &'static str,
    pub sql: &'static str,
    pub difficulty: &'static str,
    /// Scripted model answer.
    pub response: &'static str,
}

pub fn write_questions(root: &Path, split: &str, questions: &[Question]) {
    let records: Vec<_> = questions
        .iter()
        .map(|q| {
            json!({
                "question_id": q.id,
                "db_id": q.db,
                "question": q.question,
                "evidence": q.evidence,
                "SQL": q.sql,
                "difficulty": q.difficulty,
            })
        })
        .collect();
    fs::create_dir_all(root).unwrap();
    fs::write(root.join(format!("{split}.json")), serde_json::to_string_pretty(&records).unwrap()).unwrap();
}

/// Ten questions over two databases. Six scripted answers are correct:
/// simple 4 of 5, moderate 1 of 3, challenging 1 of 2.
pub fn dev_questions() -> Vec<Question> {
    vec![
        Question {
            id: 0,
            db: "world",
            question: "How many continents are there?",
            evidence: "",
            sql: "SELECT COUNT(*) FROM continents",
            difficulty: "simple",
            response: " COUNT(ContId) FROM continents",
        },
        Question {
            id: 1,
            db: "world",
            question: "List the names of countries in Asia",
            evidence: "Asia refers to Continent = 'Asia'",
            sql: "SELECT T1.CountryName FROM countries AS T1 INNER JOIN continents AS T2 ON T1.Continent = T2.ContId WHERE T2.Continent = 'Asia'",
            difficulty: "simple",
            response: " T1.CountryName FROM countries AS T1 JOIN continents AS T2 ON T1.Continent = T2.ContId WHERE T2.Continent = 'Asia' ORDER BY T1.CountryName;",
        },
        Question {
            id: 2,
            db: "world",
            question: "Which continent has the most countries?",
            evidence: "",
            sql: "SELECT T2.Continent FROM countries AS T1 INNER JOIN continents AS T2 ON T1.Continent = T2.ContId GROUP BY T2.Continent ORDER BY COUNT(*) DESC LIMIT 1",
            difficulty: "moderate",
            response: " Continent FROM countries GROUP BY Continent ORDER BY COUNT(*) DESC LIMIT 1",
        },
        Question {
            id: 3,
            db: "world",
            question: "How many countries are in Europe?",
            evidence: "Europe refers to ContId = 3",
            sql: "SELECT COUNT(*) FROM countries WHERE Continent = 3",
            difficulty: "simple",
            response: "```sql\nSELECT COUNT(CountryId) FROM countries WHERE Continent = 3\n```",
        },
        Question {
            id: 4,
            db: "world",
            question: "How many users live in Africa?",
            evidence: "",
            sql: "SELECT COUNT(*) FROM countries WHERE Continent = 1",
            difficulty: "challenging",
            response: " COUNT(*) FROM users WHERE Continent = 1",
        },
        Question {
            id: 5,
            db: "school",
            question: "How many students are there?",
            evidence: "",
            sql: "SELECT COUNT(*) FROM students",
            difficulty: "simple",
            response: " COUNT(StudentId) FROM students",
        },
        Question {
            id: 6,
            db: "school",
            question: "Who teaches the student named Ann?",
            evidence: "",
            sql: "SELECT T2.Teacher FROM students AS T1 INNER JOIN classes AS T2 ON T1.ClassId = T2.ClassId WHERE T1.Name = 'Ann'",
            difficulty: "moderate",
            response: " T2.Teacher FROM students AS T1 INNER JOIN classes AS T2 ON T1.ClassId = T2.ClassId WHERE T1.Name = 'Ann'",
        },
        Question {
            id: 7,
            db: "school",
            question: "List the names of students in grade 10",
            evidence: "",
            sql: "SELECT Name FROM students WHERE Grade = 10",
            difficulty: "moderate",
            response: " Name FROM students WHERE Grade = 11",
        },
        Question {
            id: 8,
            db: "school",
            question: "What is the average grade of students taking Biology?",
            evidence: "Biology refers to Title = 'Biology'",
            sql: "SELECT AVG(T1.Grade) FROM students AS T1 INNER JOIN classes AS T2 ON T1.ClassId = T2.ClassId WHERE T2.Title = 'Biology'",
            difficulty: "challenging",
            response: " AVG(Grade) FROM students WHERE ClassId = 2",
        },
        Question {
            id: 9,
            db: "school",
            question: "Name the students taking Algebra",
            evidence: "",
            sql: "SELECT T1.Name FROM students AS T1 INNER JOIN classes AS T2 ON T1.ClassId = T2.ClassId WHERE T2.Title = 'Algebra'",
            difficulty: "simple",
            response: " Name FROM students WHERE",
        },
    ]
}

/// Example pool questions, one split away from the dev questions.
pub fn train_questions() -> Vec<Question> {
    vec![
        Question {
            id: 100,
            db: "world",
            question: "How many countries are there?",
            evidence: "",
            sql: "SELECT COUNT(*) FROM countries",
            difficulty: "simple",
            response: "",
        },
        Question {
            id: 101,
            db: "world",
            question: "List the continents",
            evidence: "",
            sql: "SELECT Continent FROM continents",
            difficulty: "simple",
            response: "",
        },
        Question {
            id: 102,
            db: "school",
            question: "How many classes are there?",
            evidence: "",
            sql: "SELECT COUNT(*) FROM classes",
            difficulty: "simple",
            response: "",
        },
        Question {
            id: 103,
            db: "school",
            question: "Who teaches Biology?",
            evidence: "",
            sql: "SELECT Teacher FROM classes WHERE Title = 'Biology'",
            difficulty: "simple",
            response: "",
        },
    ]
}

/// Benchmark root with both databases, a `dev` split and a `train` pool.
pub fn mini_benchmark(root: &Path) {
    build_world(root);
    build_school(root);
    write_questions(root, "dev", &dev_questions());
    write_questions(root, "train", &train_questions());
}

/// Text of the last question line in a prompt.
pub fn target_question(prompt: &str) -> Option<String> {
    prompt
        .lines()
        .filter_map(|l| l.strip_prefix("### Question: "))
        .last()
        .map(|q| q.trim_end_matches('.').to_string())
}

/// Answers by looking up the prompt's target question; records every
/// exchange into `store` when one is given.
pub struct ScriptedCompleter {
    pub answers: HashMap<String, String>,
    pub fallback: Box<dyn Fn(&str) -> String + Send + Sync>,
    pub store: Option<Arc<ReplayStore>>,
    pub seen: Mutex<Vec<String>>,
}

impl ScriptedCompleter {
    pub fn from_questions(questions: &[Question]) -> Self {
        ScriptedCompleter {
            answers: questions
                .iter()
                .map(|q| (q.question.trim_end_matches('.').to_string(), q.response.to_string()))
                .collect(),
            fallback: Box::new(|_| " 1".to_string()),
            store: None,
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn with_fallback(fallback: impl Fn(&str) -> String + Send + Sync + 'static) -> Self {
        ScriptedCompleter {
            answers: HashMap::new(),
            fallback: Box::new(fallback),
            store: None,
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn recording(mut self, store: Arc<ReplayStore>) -> Self {
        self.store = Some(store);
        self
    }
}

impl Completer for ScriptedCompleter {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, GatewayError> {
        let answer = target_question(&prompt.text)
            .and_then(|q| self.answers.get(&q).cloned())
            .unwrap_or_else(|| (self.fallback)(&prompt.text));
        if let Some(store) = &self.store {
            store.insert_completion(MODEL, &prompt.text, &answer)?;
        }
        self.seen.lock().unwrap().push(prompt.text.clone());
        Ok(answer)
    }
}
